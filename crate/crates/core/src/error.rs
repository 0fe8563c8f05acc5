use std::io;

use thiserror::Error;

/// Errors raised across the completion engine.
#[derive(Debug, Error)]
pub enum QacError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    /// An optional resource (vector table, relevance endpoint) is missing or unusable.
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl QacError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        QacError::InvalidInput(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        QacError::CorruptFile(msg.into())
    }
}

pub type Result<T, E = QacError> = std::result::Result<T, E>;
