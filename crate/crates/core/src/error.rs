use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DhymError>;

#[derive(Debug, Error)]
pub enum DhymError {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two fields or a field and a structure live on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    /// The current iterate left the region where the linearization is elliptic
    /// or the hypercritical guard holds.
    #[error("state error: {0}")]
    State(String),

    #[error("linear solver stagnated after {iterations} iterations (relative residual {relative_residual:e})")]
    LinearSolve {
        iterations: usize,
        relative_residual: f64,
    },

    #[error("line search exhausted at step {step:e} (residual {residual:e})")]
    LineSearch { step: f64, residual: f64 },

    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("continuity path failed at t = {t}: {reason}")]
    Path { t: f64, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DhymError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        DhymError::Domain(msg.into())
    }
}
