use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use credence_core::bridge::BridgeError;
use credence_core::config::ConfigError;
use credence_core::metrics::MetricsError;
use credence_core::sim::LogError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    EmptyInput(String),
    #[error("{failed} of {total} runs failed (first: {first}); completed rounds were kept in {out}")]
    RunFailed { failed: usize, total: usize, first: String, out: PathBuf },
    #[error(transparent)]
    Bridge(Box<BridgeError>),
    #[error(transparent)]
    Analysis(#[from] MetricsError),
    #[error("{path}: {source}")]
    Log { path: PathBuf, source: LogError },
    #[error("{0}")]
    Mismatch(String),
}

impl From<BridgeError> for CliError {
    fn from(e: BridgeError) -> Self {
        CliError::Bridge(Box::new(e))
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "invalid_config",
            CliError::Io { .. } => "io",
            CliError::EmptyInput(_) => "empty_input",
            CliError::RunFailed { .. } => "run_failed",
            CliError::Bridge(_) => "bridge",
            CliError::Analysis(_) => "analysis",
            CliError::Log { .. } => "bad_log",
            CliError::Mismatch(_) => "replay_mismatch",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io { .. } => 4,
            CliError::EmptyInput(_) => 5,
            CliError::RunFailed { .. } => 6,
            CliError::Bridge(_) => 7,
            CliError::Analysis(_) => 8,
            CliError::Log { .. } => 9,
            CliError::Mismatch(_) => 10,
        }
    }

    /// One JSON object, written to stderr.
    pub fn report(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            code: &'a str,
            exit_code: u8,
            message: String,
        }
        #[derive(Serialize)]
        struct Report<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Report {
            error: Body { code: self.code(), exit_code: self.exit_code(), message: self.to_string() },
        })
        .expect("error report is serializable")
    }
}
