//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Array shapes do not conform for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data violates a documented invariant (bad alignment, missing
    /// corpus, checkpoint/corpus mismatch, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// A scalar argument lies outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A NaN or infinity was produced where a finite value is required.
    /// Computations abort on detection instead of propagating.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
