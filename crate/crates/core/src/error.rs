use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("malformed action in completion: {0:?}")]
    MalformedAction(String),

    #[error("too many demonstrations: {got} > {max}")]
    TooManyDemos { got: usize, max: usize },

    #[error("duplicate trajectory id {0}")]
    DuplicateId(String),

    #[error("pool entry {0} is not a successful trajectory")]
    UnsuccessfulEntry(String),

    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),

    #[error("backend refused request: {0}")]
    BackendRefusal(String),

    #[error("backend returned an empty completion")]
    EmptyCompletion,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("transferable-knowledge extraction failed for {source_id}")]
    TkExtractionFailed { source_id: String },

    #[error("demonstration pool is empty")]
    EmptyPool,

    #[error("{0}")]
    ColdCache(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("evaluation task {0} overlaps the demonstration pool")]
    Overlap(String),

    #[error("unknown task id {0}")]
    UnknownTask(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Transport-level failures that a caller may retry or report as an
    /// operational outage rather than a task failure.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, Error::BackendUnreachable(_))
    }
}
