use thiserror::Error;

/// Errors raised across the estimator, its initializer and the helpers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SofarError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("solver diverged after {outer_iterations} outer iterations (last augmented Lagrangian {last_objective})")]
    Diverged {
        outer_iterations: usize,
        last_objective: f64,
        objective_trace: Vec<f64>,
    },

    #[error("problem too large for exhaustive enumeration: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, SofarError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SofarError::InvalidArgument(msg.into()))
}
