//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or size requirements violated (e.g. non-power-of-two FFT input).
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Invalid configuration value or missing artifact.
    #[error("config error: {0}")]
    Config(String),
    /// An API contract was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),
    /// Numeric failure at runtime (NaN mid-trajectory, non-convergence).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Training diverged or failed.
    #[error("training error: {0}")]
    Training(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
