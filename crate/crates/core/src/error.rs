use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("entry '{id}' is invalid: {reason}")]
    InvalidEntry { id: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("all {0} readout records are degenerate (zero readout norm)")]
    DegenerateRecords(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("codec connection failure: {0}")]
    Connection(String),

    #[error("codec protocol violation: {reason} (payload: {payload})")]
    Protocol { reason: String, payload: String },

    #[error("codec call '{op}' timed out after {seconds:.1} s")]
    Timeout { op: String, seconds: f64 },

    #[error("entry '{entry_id}' pair {j}: {source}")]
    Pair {
        entry_id: String,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing latents for stage '{0}'")]
    MissingLatents(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_pair(self, entry_id: &str, j: usize) -> Self {
        match self {
            e @ Error::Pair { .. } => e,
            other => Error::Pair {
                entry_id: entry_id.to_string(),
                j,
                source: Box::new(other),
            },
        }
    }
}
