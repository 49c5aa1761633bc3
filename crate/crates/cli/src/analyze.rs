use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Serialize;

use credence_core::agents::Objective;
use credence_core::config::MarketConfig;
use credence_core::equilibrium::{solve_prediction, verify_no_profitable_deviation, Prediction};
use credence_core::market::{Institution, RoundRecord};
use credence_core::metrics::{
    aggregate, emit_comparison_table, human_reference, ols_interaction, panel_rows, run_totals, welch_t, Cell,
    ComparisonTable, MetricsError, MetricsSummary, OlsFit, Outcome, SimulationGroup, WelchTest,
};
use credence_core::sim::read_records;

use crate::error::CliError;
use crate::run::{read_manifest, MANIFEST, RECORDS};

pub struct Inputs {
    pub records: Vec<RoundRecord>,
    /// Market parameters from manifests found next to the logs.
    pub configs: Vec<MarketConfig>,
}

fn read_log(path: &Path) -> Result<Vec<RoundRecord>, CliError> {
    let file = File::open(path).map_err(CliError::io(path))?;
    read_records(BufReader::new(file)).map_err(|source| CliError::Log { path: path.to_path_buf(), source })
}

/// Files are read as logs. A directory contributes its merged `records.jsonl`
/// when present, otherwise every `*.jsonl` file in name order.
pub fn load_inputs(paths: &[PathBuf]) -> Result<Inputs, CliError> {
    let mut inputs = Inputs { records: Vec::new(), configs: Vec::new() };
    for path in paths {
        if path.is_dir() {
            let manifest = path.join(MANIFEST);
            if manifest.is_file() {
                inputs.configs.push(read_manifest(&manifest)?.config);
            }
            let merged = path.join(RECORDS);
            if merged.is_file() {
                inputs.records.extend(read_log(&merged)?);
                continue;
            }
            let mut logs: Vec<PathBuf> = fs::read_dir(path)
                .map_err(CliError::io(path))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            logs.sort();
            for log in logs {
                inputs.records.extend(read_log(&log)?);
            }
        } else {
            inputs.records.extend(read_log(path)?);
        }
    }
    if inputs.records.is_empty() {
        let shown: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
        return Err(CliError::EmptyInput(format!("no round records found in {}", shown.join(", "))));
    }
    Ok(inputs)
}

/// Explicit config first, then manifests (which must agree), then defaults.
pub fn market_for(explicit: Option<MarketConfig>, found: &[MarketConfig]) -> Result<MarketConfig, CliError> {
    if let Some(c) = explicit {
        return Ok(c);
    }
    let Some(first) = found.first() else { return Ok(MarketConfig::default()) };
    let same = |c: &MarketConfig| {
        c.baseline_income() == first.baseline_income() && c.max_expected_income() == first.max_expected_income()
    };
    if !found.iter().all(same) {
        return Err(CliError::Config(
            "inputs come from markets with different outside options or payoffs; aggregate them separately or pass --config"
                .into(),
        ));
    }
    Ok(first.clone())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CellKey {
    pub institution: String,
    pub reputation: bool,
    pub rounds: u32,
    pub expert_objectives: Vec<String>,
}

fn key_of(r: &RoundRecord) -> CellKey {
    CellKey {
        institution: r.condition.institution.as_str().to_string(),
        reputation: r.condition.reputation,
        rounds: r.condition.rounds,
        expert_objectives: r.condition.expert_objectives.iter().map(|o| o.as_str().to_string()).collect(),
    }
}

#[derive(Debug, Serialize)]
pub struct CellSummary {
    #[serde(flatten)]
    pub key: CellKey,
    pub summary: MetricsSummary,
}

/// Per-run total income, no reputation against reputation.
#[derive(Debug, Serialize)]
pub struct ReputationTest {
    pub institution: String,
    pub rounds: u32,
    pub expert_objectives: Vec<String>,
    pub runs_without: usize,
    pub runs_with: usize,
    pub mean_total_without: f64,
    pub mean_total_with: f64,
    #[serde(flatten)]
    pub welch: WelchTest,
}

#[derive(Debug, Serialize)]
pub struct AggregateReport {
    pub baseline_income: f64,
    pub max_income: f64,
    pub cells: Vec<CellSummary>,
    pub reputation_tests: Vec<ReputationTest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<ComparisonTable>,
}

fn group_title(records: &[&RoundRecord]) -> String {
    let objectives = &records[0].condition.expert_objectives;
    let name = match objectives.first() {
        Some(o) if objectives.iter().all(|x| x == o) => o.display_name().to_string(),
        _ => "Mixed objectives".to_string(),
    };
    format!("{name}, {} rounds", records[0].condition.rounds)
}

pub fn aggregate_report(records: &[RoundRecord], config: &MarketConfig, table: bool) -> AggregateReport {
    let mut cells: BTreeMap<CellKey, Vec<&RoundRecord>> = BTreeMap::new();
    for r in records {
        cells.entry(key_of(r)).or_default().push(r);
    }
    let mut groups: BTreeMap<String, SimulationGroup> = BTreeMap::new();
    let mut out = Vec::new();
    for (key, rs) in &cells {
        let owned: Vec<RoundRecord> = rs.iter().map(|r| (*r).clone()).collect();
        let summary = aggregate(&owned, config);
        if let Some(cell) = Cell::of(rs[0].condition.institution, rs[0].condition.reputation) {
            let title = group_title(rs);
            let g = groups.entry(title.clone()).or_insert_with(|| SimulationGroup { title, cells: BTreeMap::new() });
            g.cells.insert(cell, summary.clone());
        }
        out.push(CellSummary { key: key.clone(), summary });
    }
    let mut reputation_tests = Vec::new();
    for (key, without) in cells.iter().filter(|(k, _)| !k.reputation) {
        let Some(with) = cells.get(&CellKey { reputation: true, ..key.clone() }) else { continue };
        let totals = |rs: &Vec<&RoundRecord>| -> Vec<f64> {
            let owned: Vec<RoundRecord> = rs.iter().map(|r| (*r).clone()).collect();
            run_totals(&owned).into_iter().map(|(_, t)| t).collect()
        };
        let (a, b) = (totals(without), totals(with));
        // fewer than two runs or no variation: nothing to test
        let Ok(welch) = welch_t(&a, &b) else { continue };
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        reputation_tests.push(ReputationTest {
            institution: key.institution.clone(),
            rounds: key.rounds,
            expert_objectives: key.expert_objectives.clone(),
            runs_without: a.len(),
            runs_with: b.len(),
            mean_total_without: mean(&a),
            mean_total_with: mean(&b),
            welch,
        });
    }
    let groups: Vec<SimulationGroup> = groups.into_values().collect();
    AggregateReport {
        baseline_income: config.baseline_income().as_f64(),
        max_income: config.max_expected_income(),
        cells: out,
        reputation_tests,
        table: table.then(|| emit_comparison_table(&groups, &human_reference())),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("---".to_string(), |x| format!("{x:.3}"))
}

pub fn render_aggregate(report: &AggregateReport) -> String {
    let mut s = String::new();
    for c in &report.cells {
        s.push_str(&format!(
            "{} reputation={} rounds={} objectives={} ({} runs, {} periods)\n",
            c.key.institution,
            c.key.reputation,
            c.key.rounds,
            c.key.expert_objectives.join(","),
            c.summary.runs,
            c.summary.periods
        ));
        let json = serde_json::to_value(&c.summary).expect("summary is serializable");
        if let Some(map) = json.as_object() {
            for (k, v) in map {
                if k == "runs" || k == "periods" {
                    continue;
                }
                s.push_str(&format!("  {k:<34} {}\n", fmt_opt(v.as_f64())));
            }
        }
    }
    for t in &report.reputation_tests {
        s.push_str(&format!(
            "{} rounds={} objectives={}: run totals {:.3} (no reputation, n={}) vs {:.3} (reputation, n={}); Welch t={:.3}, df={:.1}, p={:.4}\n",
            t.institution,
            t.rounds,
            t.expert_objectives.join(","),
            t.mean_total_without,
            t.runs_without,
            t.mean_total_with,
            t.runs_with,
            t.welch.t,
            t.welch.df,
            t.welch.p
        ));
    }
    if let Some(t) = &report.table {
        s.push('\n');
        s.push_str(&t.render_text());
    }
    s
}

#[derive(Debug, Serialize)]
pub struct RegressionReport {
    pub outcome: Outcome,
    pub institution: String,
    pub objectives: Vec<String>,
    pub clustered: bool,
    pub fit: OlsFit,
}

fn only<T: Clone + PartialEq>(values: impl Iterator<Item = T>, what: &str, flag: &str) -> Result<T, CliError> {
    let mut seen: Vec<T> = Vec::new();
    for v in values {
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    match seen.len() {
        1 => Ok(seen.remove(0)),
        0 => Err(CliError::EmptyInput(format!("no records match the requested {what}"))),
        n => Err(CliError::Usage(format!("the logs mix {n} {what}s; pick one with {flag}"))),
    }
}

pub fn regress(
    records: &[RoundRecord],
    outcome: Outcome,
    institution: Option<Institution>,
    objective: Option<Objective>,
    clustered: bool,
) -> Result<RegressionReport, CliError> {
    let selected: Vec<RoundRecord> = records
        .iter()
        .filter(|r| institution.is_none_or(|i| r.condition.institution == i))
        .filter(|r| objective.is_none_or(|o| r.condition.expert_objectives.iter().all(|x| *x == o)))
        .cloned()
        .collect();
    let inst = only(selected.iter().map(|r| r.condition.institution), "institution", "--institution")?;
    let objectives = only(selected.iter().map(|r| r.condition.expert_objectives.clone()), "objective", "--objective")?;
    for reputation in [false, true] {
        if !selected.iter().any(|r| r.condition.reputation == reputation) {
            return Err(CliError::Analysis(MetricsError::Degenerate(format!(
                "the regression compares reputation conditions but no records have reputation={reputation}"
            ))));
        }
    }
    let panel = panel_rows(&selected, outcome);
    let fit = ols_interaction(&panel, clustered)?;
    Ok(RegressionReport {
        outcome,
        institution: inst.as_str().to_string(),
        objectives: objectives.iter().map(|o| o.as_str().to_string()).collect(),
        clustered,
        fit,
    })
}

pub fn render_regression(r: &RegressionReport) -> String {
    let rows = [
        ("treat", "Treat (no reputation)"),
        ("round_c", "Round (centered)"),
        ("treat_x_round_c", "Treat x Round"),
        ("const", "Constant"),
    ];
    let mut s = format!("Dependent variable: {:?} (intended), {}\n", r.outcome, r.institution);
    for (name, label) in rows {
        if let Some(c) = r.fit.coef(name) {
            s.push_str(&format!("{:<24}{:>10.3}{}\n", label, c.estimate, c.stars));
            s.push_str(&format!("{:<24}{:>10}\n", "", format!("({:.3})", c.se)));
        }
    }
    s.push_str(&format!("{:<24}{:>10}\n", "Observations", r.fit.n));
    s.push_str(&format!("{:<24}{:>10.3}\n", "R-squared", r.fit.r_squared));
    match r.fit.clusters {
        Some(k) => s.push_str(&format!("Standard errors clustered by simulation and expert ({k} clusters).\n")),
        None => s.push_str("Conventional standard errors.\n"),
    }
    s.push_str("* p<0.05, ** p<0.01, *** p<0.001\n");
    s
}

#[derive(Debug, Serialize)]
pub struct PredictReport {
    #[serde(flatten)]
    pub prediction: Prediction,
    pub no_profitable_deviation: Option<bool>,
}

pub fn predict(config: &MarketConfig) -> PredictReport {
    let prediction = solve_prediction(config);
    let no_profitable_deviation = prediction.book.map(|b| verify_no_profitable_deviation(b, config).is_equilibrium());
    PredictReport { prediction, no_profitable_deviation }
}

pub fn render_prediction(r: &PredictReport) -> String {
    let p = &r.prediction;
    match p.book {
        None => format!(
            "{}: no price book induces trade; market breaks down, total income {}\n",
            p.institution, p.total_income
        ),
        Some(book) => {
            let mut s = format!("{}: prices {book}", p.institution);
            if let Some((lo, hi)) = p.p_low_free {
                if lo != hi {
                    s.push_str(&format!(" (any p_low in {lo}..={hi})"));
                }
            }
            s.push_str(&format!(
                "\n  {}\n  consumer payoff {}, expert payoff per trade {}, total income {}, participation {}\n",
                p.expert_behavior, p.consumer_payoff, p.expert_payoff, p.total_income, p.participation
            ));
            if let Some(ok) = r.no_profitable_deviation {
                s.push_str(&format!("  no profitable unilateral deviation: {ok}\n"));
            }
            s
        }
    }
}
