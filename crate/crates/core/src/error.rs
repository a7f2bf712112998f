use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error("estimate error at height {height}: {reason}")]
    Estimate { height: u64, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error("model format error: {0}")]
    Model(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 configuration, 3 data validation, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Domain(_) => 2,
            Error::Io { .. } => 2,
            Error::Validation(_) | Error::Parse { .. } | Error::Estimate { .. } | Error::Model(_) => 3,
            Error::Numerical(_) | Error::Training { .. } => 4,
        }
    }
}
