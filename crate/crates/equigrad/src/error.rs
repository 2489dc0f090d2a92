//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward root must be a scalar, got shape {shape}")]
    NonScalarRoot { shape: String },

    #[error("graph already consumed by a backward pass")]
    GraphConsumed,

    #[error("variable does not belong to this graph")]
    ForeignVar,

    #[error("no gradient recorded for {what}")]
    MissingGrad { what: String },

    #[error("parameter {name}: {reason}")]
    Param { name: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("label {label} out of range for {classes} classes at sample {index}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("idx data: {0}")]
    Idx(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint mismatch at {name}: expected {expected}, found {found}")]
    CheckpointMismatch {
        name: String,
        expected: String,
        found: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("training step diverged: non-finite loss (per-task losses so far: {losses:?})")]
    Diverged { losses: Vec<f64> },

    #[error("dataset cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error reports a non-finite number produced by training
    /// arithmetic, as opposed to a usage or validation mistake. Trainers
    /// treat these as divergence.
    pub fn is_non_finite(&self) -> bool {
        match self {
            Error::NonFinite { .. } => true,
            Error::Param { reason, .. } => reason.contains("non-finite"),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Renders a shape like `[2, 3]` for error messages.
pub(crate) fn shape_string(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join(", "))
}
