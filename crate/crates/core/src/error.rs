use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the panel estimators and their I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("duplicate cell for unit `{unit}` at period {period}")]
    DuplicateCell { unit: String, period: String },

    #[error("unknown unit `{0}`")]
    UnknownUnit(String),

    #[error("invalid period: {0}")]
    InvalidPeriod(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("identification failure: {0}")]
    Identification(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("arithmetic domain error: {0}")]
    Domain(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
