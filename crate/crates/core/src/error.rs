use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents that do not fit together.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Invalid configuration value (learning rate, filter band, spec...).
    #[error("config error: {0}")]
    Config(String),
    /// Problem with the data itself (missing class, too few patients...).
    #[error("data error: {0}")]
    Data(String),
    /// Violated calling contract (non-scalar loss, empty batch...).
    #[error("contract error: {0}")]
    Contract(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for errors caused by the caller's configuration or inputs rather
    /// than by a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Data(_) | Error::Parse { .. } | Error::Json(_)
        )
    }
}
