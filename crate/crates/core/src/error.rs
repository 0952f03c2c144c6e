//! One error enum for the whole crate; variants carry enough context to
//! reconstruct what was violated without a debugger.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{op}: shape mismatch, left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: expected shape {expected:?}, got {actual:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        actual: Vec<usize>,
    },

    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("node {0} is not a leaf")]
    NotALeaf(usize),

    #[error("gradient output must be a scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },

    #[error("label row {row} is not in the probability simplex (sum {sum})")]
    NotInSimplex { row: usize, sum: f64 },

    #[error("training aborted at step {step}: {reason}")]
    TrainAborted { step: u64, reason: String },

    #[error("backend request {request_id} failed after {attempts} attempts: {message}")]
    BackendFailed {
        request_id: u64,
        attempts: u32,
        message: String,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    MalformedFile(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }
}
