use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the re-ranking pipeline.
#[derive(Debug, Error)]
pub enum RaiseError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("unknown {kind} {id}")]
    Lookup { kind: &'static str, id: String },

    #[error("capacity error: requested {requested}, only {available} available")]
    Capacity { requested: usize, available: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("index {index} out of range (limit {limit})")]
    Range { index: usize, limit: usize },

    #[error("explanation unavailable: {0}")]
    ExplanationUnavailable(String),

    #[error("missing artifact {path}; run `{producer}` first")]
    Dependency { path: PathBuf, producer: &'static str },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = RaiseError> = std::result::Result<T, E>;

impl RaiseError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RaiseError::Io {
            path: path.into(),
            source,
        }
    }
}
