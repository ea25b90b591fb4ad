use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid needs at least {min} points, got {got}")]
    GridTooSmall { min: usize, got: usize },

    #[error("grid values must be finite (index {index})")]
    NonFinite { index: usize },

    #[error("grid size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("moment constraints violated: |residual| = {residual:e} exceeds {tolerance:e}")]
    ConstraintViolation { residual: f64, tolerance: f64 },

    #[error("{0} is not defined for this constraint space")]
    NotApplicable(&'static str),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("eigen-solver failed: {0}")]
    Eigen(String),

    #[error("Newton iteration did not converge at t = {t}: residual {residual:e} after {iterations} iterations")]
    NewtonFailure {
        t: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("decay fit needs at least {needed} records in the window, found {found}")]
    InsufficientData { needed: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
