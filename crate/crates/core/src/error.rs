use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, bad indices or otherwise unusable arguments.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error at {location}: {detail}")]
    Numeric { location: String, detail: String },

    #[error("ingestion error in {}: {reason}", path.display())]
    Ingestion { path: PathBuf, reason: String },

    /// Config file syntax problem.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A syntactically valid config value that fails validation.
    #[error("validation error for `{field}`: {message}")]
    Validation { field: String, message: String },

    /// The noise-free Fisher information is undefined.
    #[error("Fisher information undefined for sigma = 0: the observation has no likelihood")]
    UndefinedFisher,

    #[error("runtime error: {0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
