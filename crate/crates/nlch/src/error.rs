use thiserror::Error;

/// Errors produced by solvers and model construction.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input field violates a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An iterative linear solve did not reach the requested residual.
    #[error("linear solver stalled after {iterations} iterations (relative residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    /// A non-finite value appeared during time stepping.
    #[error("non-finite value detected at step {step} in {context}")]
    NonFinite { step: usize, context: &'static str },

    /// Line search could not find sufficient decrease.
    #[error("line search failed after {backtracks} backtracks (last step {step:.3e})")]
    LineSearchFailed { backtracks: usize, step: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed snapshot or configuration input.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
