use std::path::PathBuf;

use crate::indexset::MultiIndex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty index set")]
    EmptyIndexSet,

    #[error("closure violation: {0} is not in the reduced margin")]
    ClosureViolation(MultiIndex),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("polynomial order {order} exceeds maximum {max}")]
    OrderOutOfRange { order: usize, max: usize },

    #[error("non-finite input")]
    NonFiniteInput,

    #[error("inversion bracket failure for target value {target}")]
    BracketFailure { target: f64 },

    #[error("non-finite objective at sample {index}")]
    NonFiniteObjective { index: usize },

    #[error("non-finite diagnostic at test sample {index}")]
    NonFiniteDiagnostic { index: usize },

    #[error("degenerate samples: column {column} has zero variance")]
    DegenerateSamples { column: usize },

    #[error("too few samples: need at least {min}, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("series too short: need at least {min} values, got {got}")]
    SeriesTooShort { min: usize, got: usize },

    #[error("degenerate series: zero variance")]
    DegenerateSeries,

    #[error("missing surrogate likelihood for step {0}")]
    MissingSurrogate(usize),

    #[error("model evaluation failed: {0}")]
    Model(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad user input rather than numerical trouble.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::Format { .. }
                | Error::Io(_)
                | Error::MissingSurrogate(_)
        )
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput)
    }
}
