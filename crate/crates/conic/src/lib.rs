//! Reference primal-dual interior-point solver for linear and second-order
//! cone programs.
//!
//! Problems are posed in the standard form `min cᵀx  s.t.  Ax + s = b,
//! s ∈ K` (see [`ConicProblem`]). The [`ConicBackend`] trait is the single
//! contract callers depend on, so an external solver can stand in for
//! [`InteriorPoint`].

pub mod certify;
pub mod cones;
pub mod dump;
mod ipm;
pub mod ldl;
mod problem;
pub mod sparse;

pub use certify::{certify, Certificate, CheckResult};
pub use cones::Cone;
pub use problem::{ConicProblem, Residuals, Solution, SolverConfig, Status};
pub use sparse::CscMatrix;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("program has no variables and no rows")]
    EmptyProgram,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid cone: {0}")]
    InvalidCone(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Anything that can solve a [`ConicProblem`].
pub trait ConicBackend {
    fn solve(&self, problem: &ConicProblem, cfg: &SolverConfig) -> Result<Solution, ConicError>;
}

/// The built-in homogeneous self-dual interior-point method.
#[derive(Debug, Clone, Copy, Default)]
pub struct InteriorPoint;

impl ConicBackend for InteriorPoint {
    fn solve(&self, problem: &ConicProblem, cfg: &SolverConfig) -> Result<Solution, ConicError> {
        ipm::solve(problem, cfg)
    }
}

/// Solves with the built-in interior-point method.
pub fn solve(problem: &ConicProblem, cfg: &SolverConfig) -> Result<Solution, ConicError> {
    ipm::solve(problem, cfg)
}
