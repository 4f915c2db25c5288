//! Experiment driver: configuration, multi-seed runs, verification suites, sweeps,
//! plot data and direct oracle access.

pub mod config;
pub mod dp;
pub mod plotdata;
pub mod run;
pub mod sweep;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown config key {key:?}; valid keys are:\n  {}", valid.join("\n  "))]
    UnknownKey { key: String, valid: Vec<String> },
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("manifest config hash {expected} does not match its embedded config ({found})")]
    HashMismatch { expected: String, found: String },
    #[error("sweep of {runs} runs exceeds the budget of {budget}")]
    OverBudget { runs: usize, budget: usize },
    #[error("plot data: {0}")]
    Plot(String),
    #[error(transparent)]
    Train(#[from] tokrl::trainer::TrainError),
    #[error(transparent)]
    Oracle(#[from] tokrl::oracle::OracleError),
    #[error(transparent)]
    Env(#[from] tokrl::envs::EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit code: 2 for usage and configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownKey { .. } | CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
