use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Parse {
        path: PathBuf,
        /// 1-based data row (the header is row 0).
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: bad header: {message}")]
    Header { path: PathBuf, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("dataset is already normalized")]
    AlreadyNormalized,

    #[error("dataset must be normalized with the training normalizer first")]
    NotNormalized,

    #[error("parameter arity mismatch for {family}: expected {expected}, got {got}")]
    Arity {
        family: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no ECD samples in the training portion of repeat {repeat}, fold {fold}")]
    NoEcdInTraining { repeat: usize, fold: usize },

    #[error("no ECD samples to evaluate")]
    NoEcdSamples,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
