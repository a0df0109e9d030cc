//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by trace I/O, model construction, and detection.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed trace file; `row` is the 1-based data row (0 = header).
    #[error("{path}: row {row}: {msg}")]
    TraceFormat {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("signal of length {len} too short for {wavelet} at {levels} levels")]
    SignalTooShort {
        len: usize,
        wavelet: String,
        levels: usize,
    },

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
