use std::io;

use thiserror::Error;

use crate::objective::Axis;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed metadata: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed matrix file: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite activation at (row {row}, col {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is already normalized")]
    AlreadyNormalized,

    #[error("matrix must be z-score normalized before optimization")]
    NotNormalized,

    #[error("z-score normalization needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("invalid metadata: {0}")]
    InvalidMeta(String),

    #[error("module {module} has no {axis}s")]
    EmptyModule { axis: Axis, module: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("move would leave module {module} without {axis}s")]
    InvalidMove { axis: Axis, module: usize },

    #[error("stale move: objective state changed since the move was evaluated")]
    StaleMove,

    #[error("K = {k} exceeds the limit of {limit}")]
    TooManyModules { k: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("classifier needs at least two classes in the training split")]
    SingleClass,

    #[error("sample {0} has no label")]
    MissingLabel(usize),

    #[error("category {0} has no samples")]
    EmptyCategory(String),
}

impl Error {
    /// True for errors caused by violating a partition or module-count
    /// constraint, as opposed to malformed data or I/O.
    pub fn is_constraint_violation(&self) -> bool {
        matches!(
            self,
            Error::EmptyModule { .. }
                | Error::InvalidPartition(_)
                | Error::InvalidMove { .. }
                | Error::TooManyModules { .. }
        )
    }
}
