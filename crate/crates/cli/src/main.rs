//! `credence`: run market simulations, aggregate their logs, fit the panel
//! regression, print equilibrium predictions and replay recorded model runs.

mod analyze;
mod error;
mod run;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use credence_core::agents::{AgentKind, Objective};
use credence_core::bridge::BridgeSettings;
use credence_core::config::MarketConfig;
use credence_core::market::Institution;
use credence_core::metrics::Outcome;

use error::CliError;
use run::{RunRequest, TransportChoice};

#[derive(Parser)]
#[command(name = "credence", version, about = "Credence-goods market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a batch of markets and write JSONL logs plus a manifest.
    Run(RunArgs),
    /// Cell metrics (and optionally the comparison table) from run logs.
    Aggregate(AggregateArgs),
    /// Pooled panel regression of intended fraud on the reputation treatment.
    Regress(RegressArgs),
    /// Equilibrium prediction for a market.
    Predict(PredictArgs),
    /// Re-run a recorded batch from its cassette without calling any model.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Json,
    Text,
}

#[derive(Args, Default)]
struct MarketArgs {
    /// Market config (JSON). Unset fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_institution)]
    institution: Option<Institution>,
    /// Fixed, enumerated expert names across rounds.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    reputation: Option<bool>,
    /// Objective given to every expert.
    #[arg(long, value_parser = parse_objective)]
    objective: Option<Objective>,
    #[arg(long)]
    rounds: Option<u32>,
    /// Agent kind for every expert: equilibrium, utility, llm or random.
    #[arg(long, value_parser = parse_kind)]
    experts: Option<AgentKind>,
    /// Agent kind for every consumer.
    #[arg(long, value_parser = parse_kind)]
    consumers: Option<AgentKind>,
    /// Experts also get the consumers' outside option.
    #[arg(long)]
    human_comparison: bool,
}

#[derive(Args)]
struct BridgeArgs {
    /// Prompt template directory; missing files keep the built-in text.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Chat-completion endpoint; the key is read from CREDENCE_API_KEY.
    #[arg(long)]
    endpoint: Option<String>,
    /// Child process speaking one JSON request/reply per line.
    #[arg(long)]
    transport_cmd: Option<String>,
    /// Offline stub that answers from each prompt's list of allowed answers.
    #[arg(long)]
    stub: bool,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    market: MarketArgs,
    #[arg(long, default_value_t = 1)]
    runs: u32,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Call the model. With --cassette, every exchange is recorded.
    #[arg(long)]
    live: bool,
    /// Cassette file: replayed without --live, recorded with it.
    #[arg(long)]
    cassette: Option<PathBuf>,
    #[command(flatten)]
    bridge: BridgeArgs,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    cassette: PathBuf,
    /// Manifest of the recorded batch; supplies config, runs and bridge settings.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    market: MarketArgs,
    #[arg(long)]
    runs: Option<u32>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Fail unless the replayed log is byte-identical to this one.
    #[arg(long)]
    against: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    /// Log files or run directories.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Market parameters for efficiency; defaults to the inputs' manifests.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Add the comparison table against the human-subject reference.
    #[arg(long)]
    table: bool,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RegressArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// under_treatment, over_treatment or overcharging.
    #[arg(long, value_parser = parse_outcome)]
    outcome: Outcome,
    #[arg(long, value_parser = parse_institution)]
    institution: Option<Institution>,
    #[arg(long, value_parser = parse_objective)]
    objective: Option<Objective>,
    /// Cluster-robust errors by simulation and expert.
    #[arg(long)]
    clustered: bool,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    market: MarketArgs,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

fn parse_institution(s: &str) -> Result<Institution, String> {
    s.parse()
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    s.parse()
}

fn parse_kind(s: &str) -> Result<AgentKind, String> {
    s.parse()
}

fn parse_outcome(s: &str) -> Result<Outcome, String> {
    s.parse()
}

fn load_config(path: &Path) -> Result<MarketConfig, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl MarketArgs {
    fn resolve(&self, base: Option<MarketConfig>) -> Result<MarketConfig, CliError> {
        let mut c = match (&self.config, base) {
            (Some(path), _) => load_config(path)?,
            (None, Some(base)) => base,
            (None, None) => MarketConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(i) = self.institution {
            c.institution = i;
        }
        if let Some(r) = self.reputation {
            c.reputation = r;
        }
        if let Some(t) = self.rounds {
            c.rounds = t;
        }
        if let Some(kind) = self.experts {
            c.experts.iter_mut().for_each(|a| a.kind = kind);
        }
        if let Some(kind) = self.consumers {
            c.consumers.iter_mut().for_each(|a| a.kind = kind);
        }
        if let Some(o) = self.objective {
            c.experts.iter_mut().for_each(|a| a.objective = o);
        }
        if self.human_comparison {
            c = c.human_comparison();
        }
        c.validate()?;
        Ok(c)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(CliError::io(path)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(CliError::io("<stdout>"))
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports are serializable") + "\n"
}

fn run_command(args: RunArgs) -> Result<(), CliError> {
    let config = args.market.resolve(None)?;
    let mut settings = BridgeSettings::default();
    if let Some(m) = args.bridge.model {
        settings.model = m;
    }
    if let Some(t) = args.bridge.temperature {
        settings.temperature = t;
    }
    let manifest = run::execute(RunRequest {
        command: "run",
        config,
        runs: args.runs,
        out: args.out.clone(),
        jobs: args.jobs,
        live: args.live,
        cassette: args.cassette,
        templates: args.bridge.templates,
        transport: TransportChoice {
            endpoint: args.bridge.endpoint,
            command: args.bridge.transport_cmd,
            stub: args.bridge.stub,
        },
        settings,
    })?;
    eprintln!("wrote {} runs to {}", manifest.runs.len(), args.out.display());
    Ok(())
}

fn replay_command(args: ReplayArgs) -> Result<(), CliError> {
    let recorded = args.manifest.as_deref().map(run::read_manifest).transpose()?;
    let config = args.market.resolve(recorded.as_ref().map(|m| m.config.clone()))?;
    let runs = args.runs.or(recorded.as_ref().map(|m| m.runs.len() as u32)).unwrap_or(1);
    let recorded_bridge = recorded.as_ref().and_then(|m| m.bridge.clone());
    let settings = recorded_bridge.as_ref().map(|b| b.settings.clone()).unwrap_or_default();
    let templates = args.templates.or(recorded_bridge.and_then(|b| b.templates));
    run::execute(RunRequest {
        command: "replay",
        config,
        runs,
        out: args.out.clone(),
        jobs: args.jobs,
        live: false,
        cassette: Some(args.cassette),
        templates,
        transport: TransportChoice::default(),
        settings,
    })?;
    if let Some(reference) = args.against {
        let replayed_path = args.out.join(run::RECORDS);
        let replayed = fs::read(&replayed_path).map_err(CliError::io(&replayed_path))?;
        let original = fs::read(&reference).map_err(CliError::io(&reference))?;
        if replayed != original {
            return Err(CliError::Mismatch(format!(
                "{} differs from {}",
                replayed_path.display(),
                reference.display()
            )));
        }
        eprintln!("replay matches {}", reference.display());
    }
    Ok(())
}

fn aggregate_command(args: AggregateArgs) -> Result<(), CliError> {
    let inputs = analyze::load_inputs(&args.inputs)?;
    let explicit = args.config.as_deref().map(load_config).transpose()?;
    let config = analyze::market_for(explicit, &inputs.configs)?;
    let report = analyze::aggregate_report(&inputs.records, &config, args.table);
    let text = match args.format {
        Format::Json => to_json(&report),
        Format::Text => analyze::render_aggregate(&report),
    };
    emit(args.out.as_deref(), &text)
}

fn regress_command(args: RegressArgs) -> Result<(), CliError> {
    let inputs = analyze::load_inputs(&args.inputs)?;
    let report = analyze::regress(&inputs.records, args.outcome, args.institution, args.objective, args.clustered)?;
    let text = match args.format {
        Format::Json => to_json(&report),
        Format::Text => analyze::render_regression(&report),
    };
    emit(args.out.as_deref(), &text)
}

fn predict_command(args: PredictArgs) -> Result<(), CliError> {
    let config = args.market.resolve(None)?;
    let report = analyze::predict(&config);
    let text = match args.format {
        Format::Json => to_json(&report),
        Format::Text => analyze::render_prediction(&report),
    };
    emit(None, &text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.report());
            return ExitCode::from(err.exit_code());
        }
    };
    let result = match cli.command {
        Command::Run(a) => run_command(a),
        Command::Aggregate(a) => aggregate_command(a),
        Command::Regress(a) => regress_command(a),
        Command::Predict(a) => predict_command(a),
        Command::Replay(a) => replay_command(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.report());
            ExitCode::from(err.exit_code())
        }
    }
}
