// `!(x > 0.0)` is used on purpose so NaN fails parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod linesearch;
pub mod linops;
pub mod precond;
pub mod problems;
pub mod solver;
pub mod splitting;

pub use error::{Error, Result};
pub use linops::{LinearOperator, SymmetricCsr, Vector};
pub use precond::{Preconditioner, PreconditionerKind};
pub use splitting::{AffinePart, Problem, SurrogateState};
