use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed record {record}: {reason}")]
    Format { record: usize, reason: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite component at vector {row}, coordinate {col}")]
    NonFinite { row: usize, col: usize },

    #[error("zero vector at row {0} cannot be normalized for cosine distance")]
    ZeroVector(usize),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("zero-length edge between nodes {0} and {1}")]
    DuplicateEdge(u32, u32),

    #[error("index file is corrupt: {0}")]
    Corrupt(String),

    #[error("unsupported index file version {0}")]
    Version(u32),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
