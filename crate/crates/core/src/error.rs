use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, CamdpError>;

#[derive(Debug, Error)]
pub enum CamdpError {
    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),

    #[error("matrix is not row-stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },

    #[error("policy shape mismatch: {0}")]
    PolicyShapeMismatch(String),

    #[error("joint policy count {count} exceeds the cap {cap}")]
    SizeOverflow { count: u128, cap: u128 },

    #[error("linear system (I - gamma P) is singular")]
    SingularSystem,

    #[error("iterative evaluation did not converge in {iters} iterations (last residual {residual:e})")]
    MaxItersExceeded { iters: usize, residual: f64 },

    #[error("chain is reducible; stationary distribution is not unique")]
    Reducible,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
