use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{path}: row {row} has {got} columns, expected {expected}")]
    RowWidth {
        path: PathBuf,
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}: truncated file, expected {expected} bytes, found {got}")]
    Truncated { path: PathBuf, expected: usize, got: usize },
    #[error("label {label} out of range for {num_classes} classes (row {row})")]
    LabelOutOfRange { row: usize, label: i64, num_classes: usize },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("{path}: cannot parse `{token}` at row {row}")]
    Parse { path: PathBuf, row: usize, token: String },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("step size {step} invalid for {num_classes} classes")]
    InvalidStepSize { step: usize, num_classes: usize },
    #[error("step {step} outside 1..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("class {0} has no training rows")]
    EmptyClass(usize),
    #[error("herding quota {quota} invalid for {rows} rows")]
    InvalidQuota { quota: usize, rows: usize },
    #[error("task {0} has no training rows")]
    EmptyTask(usize),
    #[error("test label {label} not among the {seen} seen classes")]
    UnseenLabel { label: usize, seen: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Json(_) | Error::InvalidStepSize { .. } => ErrorKind::Config,
            Error::MalformedHeader { .. }
            | Error::RowWidth { .. }
            | Error::Truncated { .. }
            | Error::LabelOutOfRange { .. }
            | Error::NonFiniteFeature { .. }
            | Error::Parse { .. }
            | Error::InvalidDataset(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Checkpoint(_) => ErrorKind::Data,
            _ => ErrorKind::Runtime,
        }
    }
}
