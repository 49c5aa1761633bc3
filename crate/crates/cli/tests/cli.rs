use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn credence(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_credence")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Exit code and the `code` field of the JSON error on stderr.
fn failure(out: &Output) -> (i32, String) {
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is one JSON object");
    (out.status.code().unwrap(), err["error"]["code"].as_str().unwrap().to_string())
}

fn records(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn predict_verifiability() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&credence(&["predict", "--institution", "verifiability"], dir.path()));
    let p: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(p["book"], serde_json::json!({"p_low": 3, "p_high": 7}));
    assert_eq!(p["total_income"], 24.0);
    assert_eq!(p["no_profitable_deviation"], true);
}

#[test]
fn one_shot_equilibrium_runs_have_expected_income_twelve() {
    let dir = tempfile::tempdir().unwrap();
    ok(&credence(&["run", "--runs", "50", "--seed", "3", "--out", "eq"], dir.path()));
    let recs = records(&dir.path().join("eq/records.jsonl"));
    assert_eq!(recs.len(), 50);
    let mut sum = 0.0;
    for r in &recs {
        // everyone trades at {3,3}; big problems lose 2 in total, small ones gain 8
        let big = r["problems"].as_array().unwrap().iter().filter(|p| *p == "big").count() as f64;
        let total: f64 = r["consumer_payoffs"]
            .as_array()
            .unwrap()
            .iter()
            .chain(r["expert_payoffs"].as_array().unwrap())
            .map(|x| x.as_f64().unwrap())
            .sum();
        assert!((total - (8.0 * (4.0 - big) - 2.0 * big)).abs() < 1e-9);
        sum += total;
    }
    // 12 in expectation; the per-run standard deviation is 10
    assert!((sum / 50.0 - 12.0).abs() < 5.0);
}

#[test]
fn repeated_runs_and_identical_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec!["run", "--runs", "15", "--rounds", "16", "--experts", "random", "--jobs", "3", "--seed", "8", "--out", out]
    };
    ok(&credence(&args("a"), dir.path()));
    ok(&credence(&args("b"), dir.path()));
    assert_eq!(records(&dir.path().join("a/records.jsonl")).len(), 240);
    let a = fs::read(dir.path().join("a/records.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/records.jsonl")).unwrap());
    assert_eq!(fs::read_dir(dir.path().join("a/runs")).unwrap().count(), 15);

    let agg_a = ok(&credence(&["aggregate", "a", "--table"], dir.path()));
    let agg_b = ok(&credence(&["aggregate", "b", "--table"], dir.path()));
    assert_eq!(agg_a, agg_b);
    let report: Value = serde_json::from_str(&agg_a).unwrap();
    assert_eq!(report["cells"][0]["summary"]["periods"], 240);
    assert_eq!(report["baseline_income"], 6.4);

    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["seed"], 8);
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 15);
}

#[test]
fn regress_matches_the_two_treatments() {
    let dir = tempfile::tempdir().unwrap();
    for (rep, out) in [("true", "rep"), ("false", "norep")] {
        ok(&credence(
            &["run", "--runs", "4", "--rounds", "16", "--experts", "random", "--reputation", rep, "--out", out],
            dir.path(),
        ));
    }
    let agg: Value = serde_json::from_str(&ok(&credence(&["aggregate", "rep", "norep"], dir.path()))).unwrap();
    let t = &agg["reputation_tests"][0];
    assert_eq!((t["runs_without"].as_u64(), t["runs_with"].as_u64()), (Some(4), Some(4)));
    assert!(t["p"].as_f64().unwrap() <= 1.0);

    let text =
        ok(&credence(&["regress", "rep", "norep", "--outcome", "under_treatment", "--format", "text"], dir.path()));
    assert!(text.contains("Observations") && text.contains("Treat x Round"));
    let json: Value = serde_json::from_str(&ok(&credence(
        &["regress", "rep", "norep", "--outcome", "overcharging", "--clustered"],
        dir.path(),
    )))
    .unwrap();
    assert_eq!(json["fit"]["n"], 2 * 4 * 16 * 4);
    assert_eq!(json["fit"]["clusters"], 32);

    // one treatment alone cannot identify the treatment effect
    let (code, kind) = failure(&credence(&["regress", "rep", "--outcome", "overcharging"], dir.path()));
    assert_eq!((code, kind.as_str()), (8, "analysis"));
}

#[test]
fn error_paths_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    assert_eq!(failure(&credence(&["aggregate", "empty"], dir.path())), (5, "empty_input".into()));

    fs::write(dir.path().join("bad.json"), r#"{"n_experts": 4, "h_big": 3.0}"#).unwrap();
    assert_eq!(
        failure(&credence(&["run", "--config", "bad.json", "--out", "never"], dir.path())),
        (3, "invalid_config".into())
    );
    assert!(!dir.path().join("never").exists());

    fs::write(dir.path().join("typo.json"), r#"{"n_expert": 4}"#).unwrap();
    assert_eq!(failure(&credence(&["predict", "--config", "typo.json"], dir.path())).1, "invalid_config");
    assert_eq!(failure(&credence(&["run", "--no-such-flag"], dir.path())), (2, "usage".into()));
    assert_eq!(failure(&credence(&["run", "--experts", "llm", "--out", "x"], dir.path())), (2, "usage".into()));
    assert_eq!(failure(&credence(&["aggregate", "missing.jsonl"], dir.path())).1, "io");

    fs::write(dir.path().join("garbage.jsonl"), "not json\n").unwrap();
    assert_eq!(failure(&credence(&["aggregate", "garbage.jsonl"], dir.path())), (9, "bad_log".into()));
}

#[test]
fn record_then_replay_is_byte_identical_and_tampering_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&credence(
        &[
            "run",
            "--experts",
            "llm",
            "--consumers",
            "llm",
            "--objective",
            "self_interested",
            "--rounds",
            "16",
            "--runs",
            "2",
            "--live",
            "--stub",
            "--cassette",
            "tape.jsonl",
            "--out",
            "rec",
        ],
        p,
    ));
    assert_eq!(records(&p.join("rec/records.jsonl")).len(), 32);
    assert!(p.join("rec/comprehension.jsonl").exists());
    ok(&credence(
        &[
            "replay",
            "--cassette",
            "tape.jsonl",
            "--manifest",
            "rec/manifest.json",
            "--out",
            "rep",
            "--against",
            "rec/records.jsonl",
        ],
        p,
    ));

    let tape = fs::read_to_string(p.join("tape.jsonl")).unwrap();
    let mut lines: Vec<String> = tape.lines().map(str::to_string).collect();
    let last = lines.len() - 1;
    let mut entry: Value = serde_json::from_str(&lines[last]).unwrap();
    entry["digest"] = Value::String("f".repeat(64));
    lines[last] = entry.to_string();
    fs::write(p.join("tampered.jsonl"), lines.join("\n") + "\n").unwrap();
    let out =
        credence(&["replay", "--cassette", "tampered.jsonl", "--manifest", "rec/manifest.json", "--out", "bad"], p);
    let (code, kind) = failure(&out);
    assert_eq!((code, kind.as_str()), (6, "run_failed"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("drift"));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(p.join("bad/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
    assert!(manifest["parts"].as_array().unwrap().iter().any(|x| x.as_str().unwrap().ends_with(".partial.jsonl")));
}
