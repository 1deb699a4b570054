use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator and optimizer.
#[derive(Debug, Error)]
pub enum RisError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate load set: every reflection coefficient equals the structural mode")]
    DegenerateLoadSet,

    #[error("instance too large for exhaustive search: {configurations} configurations (limit {limit})")]
    Capacity { configurations: f64, limit: u64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, RisError>;

pub(crate) fn invalid(msg: impl Into<String>) -> RisError {
    RisError::InvalidArgument(msg.into())
}
