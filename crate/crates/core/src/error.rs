//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A forward or training computation left the finite range.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed input data (CoNLL files, label schemes, generators).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed or unknown experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint or report files that do not match their manifest.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
