use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TafaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TafaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("feature index {index} out of range for {dim} features")]
    FeatureOutOfRange { index: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("class {class} has {count} training rows; at least 2 are required")]
    ClassTooSmall { class: usize, count: usize },

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("cannot draw {requested} distinct templates from {available} possible")]
    CandidateBudget { requested: usize, available: u128 },

    #[error("enumeration of {requested} terms exceeds the limit of {limit}")]
    EnumerationBudget { requested: u128, limit: u128 },

    #[error("unsupported artifact: expected schema {expected} v{version}, found {found}")]
    Schema {
        expected: &'static str,
        version: u32,
        found: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    CsvFormat(#[from] csv::Error),
}

impl TafaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TafaError::InvalidArgument(msg.into())
    }
}
