use thiserror::Error;

/// Errors raised by the dating toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("document {id:?} is empty after preprocessing")]
    EmptyDocument { id: String },

    #[error("document {id:?} has no year")]
    MissingYear { id: String },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("need at least {needed} documents, got {got}")]
    TooFewDocuments { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("all-zero vector: similarity is undefined")]
    ZeroVector,

    #[error("document {id:?} yields no {k}-shingles")]
    NoShingles { id: String, k: usize },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("empty parameter grid: {0}")]
    EmptyGrid(&'static str),

    #[error("document {id:?} is undatable: {reason}")]
    Undatable { id: String, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn undatable(id: &str, reason: impl Into<String>) -> Self {
        Error::Undatable {
            id: id.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
