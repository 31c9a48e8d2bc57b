use thiserror::Error;

/// Errors raised by the learning and tomography pipeline.
#[derive(Debug, Error)]
pub enum HltError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("numeric consistency: {0}")]
    NumericConsistency(String),

    #[error("unsupported observable: {0}")]
    UnsupportedObservable(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HltError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(HltError::InvalidArgument(msg.into()))
}
