use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error at line {line}: {message}")]
    Validation { line: u64, message: String },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("threshold error: {0}")]
    Threshold(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("checkpoint error in `{field}`: {message}")]
    Checkpoint { field: String, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn checkpoint(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            field: field.into(),
            message: message.into(),
        }
    }
}
