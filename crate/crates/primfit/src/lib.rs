//! File formats, checkpoints, reports, and the command-line interface for
//! the primitive-decomposition toolkit. All numerics live in
//! `primfit-core`; this crate only moves data in and out.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod io;
pub mod report;

use thiserror::Error;

/// CLI-facing error with a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Unfittable(String),
    #[error("{0}")]
    Diverged(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Unfittable(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Gradcheck(_) => 4,
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

impl From<primfit_core::CoreError> for CliError {
    fn from(e: primfit_core::CoreError) -> Self {
        use primfit_core::CoreError;
        match &e {
            CoreError::Degenerate { .. } => CliError::Unfittable(e.to_string()),
            CoreError::NonFinite { .. } => CliError::Diverged(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

/// Nine significant digits, round-trippable through f64 parsing.
pub fn fmt_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{:.8e}", x)
}
