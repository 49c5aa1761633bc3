use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use credence_core::agents::build_agents;
use credence_core::bridge::{
    Bridge, BridgeMode, BridgeSettings, Cassette, HttpTransport, ProcessTransport, ScriptedTransport, Templates,
    Transport,
};
use credence_core::config::MarketConfig;
use credence_core::sim::{run_market, write_records, ComprehensionAnswer, RunLog};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const RECORDS: &str = "records.jsonl";
pub const COMPREHENSION: &str = "comprehension.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeManifest {
    pub mode: BridgeMode,
    pub settings: BridgeSettings,
    pub cassette: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub transport: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub run: u32,
    pub completed_rounds: usize,
    pub error: String,
}

/// Everything needed to re-derive the outputs next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: MarketConfig,
    pub seed: u64,
    pub runs: Vec<u32>,
    pub bridge: Option<BridgeManifest>,
    pub records: PathBuf,
    pub parts: Vec<PathBuf>,
    pub comprehension: Option<PathBuf>,
    pub status: String,
    pub failures: Vec<FailedRun>,
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Where model replies come from when the config has language-model agents.
#[derive(Debug, Clone, Default)]
pub struct TransportChoice {
    pub endpoint: Option<String>,
    pub command: Option<String>,
    pub stub: bool,
}

impl TransportChoice {
    fn describe(&self) -> Option<String> {
        if self.stub {
            Some("stub".into())
        } else if let Some(url) = &self.endpoint {
            Some(format!("http {url}"))
        } else {
            self.command.as_ref().map(|c| format!("process {c}"))
        }
    }

    fn open(&self) -> Result<Option<Box<dyn Transport>>, CliError> {
        let chosen = [self.stub, self.endpoint.is_some(), self.command.is_some()].iter().filter(|&&b| b).count();
        if chosen > 1 {
            return Err(CliError::Usage("choose at most one of --endpoint, --transport-cmd and --stub".into()));
        }
        if self.stub {
            return Ok(Some(Box::new(ScriptedTransport::default())));
        }
        if let Some(url) = &self.endpoint {
            return Ok(Some(Box::new(HttpTransport::from_env(url.clone()))));
        }
        if let Some(cmd) = &self.command {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or_else(|| CliError::Usage("--transport-cmd is empty".into()))?;
            let args: Vec<String> = parts.collect();
            let t = ProcessTransport::spawn(&program, &args)
                .map_err(|e| CliError::Usage(format!("cannot start `{program}`: {e}")))?;
            return Ok(Some(Box::new(t)));
        }
        Ok(None)
    }
}

pub struct RunRequest {
    pub command: &'static str,
    pub config: MarketConfig,
    pub runs: u32,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub live: bool,
    pub cassette: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub transport: TransportChoice,
    pub settings: BridgeSettings,
}

fn bridge_for(req: &RunRequest) -> Result<Option<(Arc<Bridge>, BridgeManifest)>, CliError> {
    if !req.config.uses_llm() {
        return Ok(None);
    }
    let mode = match (req.live, &req.cassette) {
        (true, None) => BridgeMode::Live,
        (true, Some(_)) => BridgeMode::Record,
        (false, Some(_)) => BridgeMode::Replay,
        (false, None) => {
            return Err(CliError::Usage(
                "the config has language-model agents: pass --live to call a model, --cassette to replay one, or both to record"
                    .into(),
            ))
        }
    };
    let cassette = match (mode, &req.cassette) {
        (BridgeMode::Record, Some(path)) => Some(Cassette::create(path)?),
        (BridgeMode::Replay, Some(path)) => Some(Cassette::load(path)?),
        _ => None,
    };
    let transport = if mode == BridgeMode::Replay { None } else { req.transport.open()? };
    if mode != BridgeMode::Replay && transport.is_none() {
        return Err(CliError::Usage("--live needs a transport: --endpoint, --transport-cmd or --stub".into()));
    }
    let templates = match &req.templates {
        Some(dir) => Templates::from_dir(dir)?,
        None => Templates::default(),
    };
    let manifest = BridgeManifest {
        mode,
        settings: req.settings.clone(),
        cassette: req.cassette.clone(),
        templates: req.templates.clone(),
        transport: if mode == BridgeMode::Replay { None } else { req.transport.describe() },
    };
    let bridge = Bridge::new(mode, req.settings.clone(), transport, cassette, templates)?;
    Ok(Some((Arc::new(bridge), manifest)))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path).map_err(CliError::io(path))?);
    for item in items {
        let line = serde_json::to_string(item).expect("log items are serializable");
        writeln!(out, "{line}").map_err(CliError::io(path))?;
    }
    out.flush().map_err(CliError::io(path))
}

fn part_name(run: u32, partial: bool) -> String {
    if partial {
        format!("run-{run:05}.partial.jsonl")
    } else {
        format!("run-{run:05}.jsonl")
    }
}

/// Runs the batch, writes one part file per run, merges them and writes the manifest.
pub fn execute(req: RunRequest) -> Result<RunManifest, CliError> {
    req.config.validate()?;
    if req.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let bridge = bridge_for(&req)?;
    let parts_dir = req.out.join("runs");
    fs::create_dir_all(&parts_dir).map_err(CliError::io(&parts_dir))?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = req.jobs {
        pool = pool.num_threads(jobs.max(1));
    }
    let pool = pool.build().map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;

    let config = &req.config;
    let shared = bridge.as_ref().map(|(b, _)| b);
    let outcomes: Vec<Result<(RunLog, Option<String>), CliError>> = pool.install(|| {
        (0..req.runs)
            .into_par_iter()
            .map(|run| {
                let mut agents = build_agents(config, run, shared).map_err(|e| CliError::Config(e.to_string()))?;
                let (log, error) = match run_market(config, run, &mut agents) {
                    Ok(log) => (log, None),
                    Err(failure) => (failure.partial, Some(failure.error.to_string())),
                };
                let path = parts_dir.join(part_name(run, error.is_some()));
                write_jsonl(&path, &log.records)?;
                Ok((log, error))
            })
            .collect()
    });

    let mut logs = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        logs.push(o?);
    }
    let records_path = req.out.join(RECORDS);
    let mut merged = BufWriter::new(File::create(&records_path).map_err(CliError::io(&records_path))?);
    let mut comprehension: Vec<ComprehensionAnswer> = Vec::new();
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for (log, error) in &logs {
        write_records(&mut merged, &log.records).map_err(CliError::io(&records_path))?;
        comprehension.extend(log.comprehension.iter().cloned());
        parts.push(PathBuf::from("runs").join(part_name(log.run, error.is_some())));
        if let Some(e) = error {
            failures.push(FailedRun { run: log.run, completed_rounds: log.records.len(), error: e.clone() });
        }
    }
    merged.flush().map_err(CliError::io(&records_path))?;
    let comprehension_file = if comprehension.is_empty() {
        None
    } else {
        let path = req.out.join(COMPREHENSION);
        write_jsonl(&path, &comprehension)?;
        Some(PathBuf::from(COMPREHENSION))
    };

    let manifest = RunManifest {
        tool: "credence".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: req.command.into(),
        config: req.config.clone(),
        seed: req.config.seed,
        runs: (0..req.runs).collect(),
        bridge: bridge.map(|(_, m)| m),
        records: PathBuf::from(RECORDS),
        parts,
        comprehension: comprehension_file,
        status: if failures.is_empty() { "complete" } else { "failed" }.into(),
        failures,
    };
    let manifest_path = req.out.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
    fs::write(&manifest_path, text + "\n").map_err(CliError::io(&manifest_path))?;

    if let Some(first) = manifest.failures.first() {
        return Err(CliError::RunFailed {
            failed: manifest.failures.len(),
            total: req.runs as usize,
            first: format!("run {}: {}", first.run, first.error),
            out: req.out,
        });
    }
    Ok(manifest)
}
