//! A small primal-dual interior-point solver for conic programs mixing PSD
//! blocks, a nonnegative orthant and free scalars.
//!
//! Dense linear algebra throughout, except that the Schur complement is
//! factored over its envelope so block-sparse problems scale with their
//! coupling structure rather than their total size.

mod envelope;
mod ipm;
mod problem;

use thiserror::Error;

pub use ipm::{solve, IterationLog, Residuals, SdpSolution, SdpStatus, SolverOptions, NEAR_OPTIMAL_FACTOR};
pub use problem::{LinearForm, SdpProblem, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("variable {0:?} is out of range for the problem dimensions")]
    BadIndex(Var),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
}
