//! Config-driven experiments on top of `jko-core`: trajectories, convergence
//! studies against a fine reference, proximal-map tables and a certification
//! suite that checks the solvers against independent oracles.

pub mod certify;
pub mod commands;
pub mod config;
pub mod output;

pub use certify::{certify, CertifyOptions, CertifyReport, OtSolverFn, SuiteResult};
pub use commands::{convergence_study, run, toy_potential, RunSummary, StudyRow, StudySummary, ToySummary};
pub use config::{ExperimentConfig, Format};

use thiserror::Error;

/// Errors surfaced by the CLI, each with its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Solver(_) | Self::Io(_) => 2,
            Self::Certification(_) => 3,
        }
    }
}

impl From<jko_core::Error> for CliError {
    fn from(e: jko_core::Error) -> Self {
        use jko_core::Error as E;
        match e {
            E::Solver(_) | E::MassDrift(_) => Self::Solver(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Io(e.to_string())
    }
}
