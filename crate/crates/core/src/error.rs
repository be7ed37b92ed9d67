use std::path::PathBuf;

use thiserror::Error;

use crate::detection::CategoryId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("detection score {0} outside [0, 1]")]
    InvalidScore(f64),

    #[error("category {0} is not in the label space")]
    UnknownCategory(CategoryId),

    #[error("category {0} has no positive examples")]
    NoPositives(CategoryId),

    #[error("pool for category {0} needs at least one positive and one negative")]
    DegeneratePool(CategoryId),

    #[error("no category reaches the minimum of {min_examples} positive examples")]
    NoEligibleCategories { min_examples: usize },

    #[error("invalid counts: {n_pos} positives out of {n_total}")]
    InvalidCounts { n_pos: usize, n_total: usize },

    #[error("exhaustive enumeration needs {needed} subsets, limit is {limit}")]
    TooManySubsets { needed: u128, limit: u128 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("category {0} has no examples")]
    EmptyCategory(CategoryId),

    #[error("per-category maps cover different categories")]
    CategoryMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    #[error("head/tail split has no head categories")]
    EmptyHead,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
