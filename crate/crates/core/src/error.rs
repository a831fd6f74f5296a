use thiserror::Error;

use crate::mfnet::Activation;

/// Errors produced by the simulator and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch ({what}): expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("activation {0:?} has zero gradient almost everywhere and cannot be trained")]
    UnsupportedForTraining(Activation),

    #[error("prior is not normalizable: {0}")]
    NotNormalizable(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("dynamics diverged during {stage} at step {step}: {detail}")]
    Diverged {
        stage: String,
        step: usize,
        detail: String,
        /// Training risk recorded up to the failing step.
        risk_prefix: Vec<f64>,
    },

    #[error("insufficient data: {usable} usable points, at least {required} required")]
    InsufficientData { usable: usize, required: usize },

    #[error("{failed} of {total} replicates failed")]
    ReplicatesFailed { failed: usize, total: usize },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, got })
    }
}
