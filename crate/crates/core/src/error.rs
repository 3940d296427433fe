use std::io;

/// Errors produced by the retrieval engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("index is empty")]
    EmptyIndex,

    #[error("index is frozen; no further insertions are accepted")]
    Frozen,

    #[error("index must be frozen before it can be saved")]
    NotFrozen,

    #[error("record {0} not found")]
    NotFound(u64),

    #[error("no record eligible for sampling: every entity matches {0:?}")]
    ExhaustedStore(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("search backend failed: {0}")]
    Backend(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("index and store are misaligned: {0}")]
    Misaligned(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
