use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bad blob header: {0}")]
    BadHeader(String),

    #[error("blob payload is {actual} bytes, expected {expected} (dim {dim} x count {count} x 4)")]
    PayloadLength {
        expected: u64,
        actual: u64,
        dim: u32,
        count: u64,
    },

    #[error("record {index}: {message}")]
    Record { index: usize, message: String },

    #[error("zero-norm vector for image {image_id}")]
    ZeroNorm { image_id: String },

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("invalid threshold policy: {0}")]
    Policy(String),

    #[error("unknown image ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),

    #[error("unknown pair ids: {}", .0.join(", "))]
    UnknownPairs(Vec<String>),

    #[error("annotation rule violation: {0}")]
    Rule(String),

    #[error("invalid subset spec: {0}")]
    Subset(String),

    #[error("invalid protocol: {0}")]
    Protocol(String),

    #[error("missing counterpart record: {0}")]
    MissingRecord(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by the filesystem rather than by file content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
