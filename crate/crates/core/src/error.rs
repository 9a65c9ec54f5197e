use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MopeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MopeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no usable records in {0}")]
    EmptyResult(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("symbol {0:?} is not in the alphabet")]
    UnknownSymbol(char),

    #[error("symbol id {0} is not a valid context symbol")]
    UnknownSymbolId(u32),

    #[error("empty input")]
    EmptyInput,

    #[error("edit operation {op} is out of range for a string of length {len}")]
    EditOutOfRange { op: String, len: usize },

    #[error("invalid password: {0}")]
    InvalidPassword(String),

    #[error("candidate cap of {cap} exceeded ({count} candidates pending)")]
    CandidateCapExceeded { cap: usize, count: usize },

    #[error("password has zero probability under the model")]
    ZeroProbability,

    #[error("model format error: {0}")]
    Format(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MopeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MopeError::Io {
            path: path.into(),
            source,
        }
    }
}
