use thiserror::Error;

/// Errors raised by the solver library.
///
/// Structural errors (bad dimensions, infeasible parameters) are separated from
/// runtime failures (line search exhaustion, divergence, invariant violations
/// under strict bound enforcement).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("operator is not symmetric: {0}")]
    NotSymmetric(String),

    #[error("negative weight {value} at ({row}, {col})")]
    NegativeWeight { row: usize, col: usize, value: f64 },

    #[error("nonpositive diagonal entry {value} at index {index}")]
    NonpositiveDiagonal { index: usize, value: f64 },

    #[error("preconditioner infeasible: {0}")]
    InfeasiblePreconditioner(String),

    #[error("problem has no affine gradient structure; {0}")]
    MissingAffinePart(&'static str),

    #[error("conjugate gradient did not converge in {iterations} iterations (residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("line search exhausted {backtracks} backtracks without sufficient decrease")]
    LineSearchExhausted { backtracks: usize },

    #[error("step-size bound violated: {0}")]
    BoundViolation(String),

    #[error("iteration {iteration}: invariant `{invariant}` violated by {excess:e}")]
    InvariantViolation {
        iteration: usize,
        invariant: &'static str,
        excess: f64,
    },

    #[error("divergence at iteration {iteration}: energy {energy:e} exceeds guard {guard:e}")]
    Diverged { iteration: usize, energy: f64, guard: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("image input: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
