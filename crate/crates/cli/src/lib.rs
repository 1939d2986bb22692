//! Command-line front end for `massdesign`.
//!
//! Exit codes: 0 success, 1 other failure, 2 infeasible, 3 parse or usage
//! error, 4 node budget exhausted.

pub mod commands;
pub mod config;
pub mod io;

use thiserror::Error;

pub use config::{parse_config, ConfigError, RunConfig, SolverMode};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] massdesign::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use massdesign::Error as E;
        match self {
            CliError::Config(_) | CliError::Parse { .. } | CliError::Usage(_) => 3,
            CliError::Io(_) => 1,
            CliError::Core(E::Infeasible(_) | E::NoFeasibleIncumbent(_)) => 2,
            CliError::Core(E::BudgetExhausted(_)) => 4,
            CliError::Core(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
