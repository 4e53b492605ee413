use std::io;
use std::path::{Path, PathBuf};

use mfg_core::SolverError;
use thiserror::Error;

/// Exit status for a converged solve.
pub const EXIT_OK: i32 = 0;
/// Exit status for usage, configuration and I/O errors.
pub const EXIT_ERROR: i32 = 1;
/// Exit status when a solver diverges or hits its iteration cap.
pub const EXIT_DIVERGED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key '{key}': {message}")]
    Key { key: String, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl CliError {
    pub fn key(key: &str, message: impl ToString) -> Self {
        Self::Key {
            key: key.to_string(),
            message: message.to_string(),
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// The offending config key, when known.
    pub fn key_name(&self) -> Option<&str> {
        match self {
            Self::Key { key, .. } => Some(key),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Solver(SolverError::Kernel(_) | SolverError::Diagnostics(_)) => EXIT_DIVERGED,
            _ => EXIT_ERROR,
        }
    }
}
