use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown feedback token `{token}`")]
    UnknownFeedback { line: usize, token: String },

    #[error("line {line}: item {item} is outside the catalog of {catalog_size} items")]
    ItemOutOfRange {
        line: usize,
        item: u64,
        catalog_size: usize,
    },

    #[error("item {item} is outside the catalog of {catalog_size} items")]
    UnknownItem { item: u32, catalog_size: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cosine similarity is undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("parameter checksum mismatch at session start: expected {expected}, found {actual}")]
    ChecksumMismatch { expected: String, actual: String },

    #[error("stale artifact: {0}")]
    Stale(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
