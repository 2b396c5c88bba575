//! Convex optimization kernels.
//!
//! * [`solve_lp`]: primal-dual predictor-corrector interior point method for
//!   linear programs with an optional separable quadratic objective term.
//! * [`solve_qcqp`]: primal-dual interior point method for a linear objective
//!   under one convex quadratic inequality and any number of linear ones.
//!
//! Both return a [`SolveCertificate`] whose KKT residual is recomputed from
//! the problem data and the returned solution by the public evaluators
//! [`lp_kkt_residual`] and [`qcqp_kkt_residual`]. Everything is sequential
//! and deterministic.

mod dump;
mod envelope;
mod lp;
mod qcqp;
mod sparse;

use std::time::Duration;

pub use dump::{read_lp_dump, read_qcqp_dump, write_lp_dump, write_qcqp_dump, DumpError};
pub use lp::{lp_kkt_residual, solve_lp, solve_lp_with, InfeasibilityWitness, LinearProgram, LpOptions, LpRow, LpSolution};
pub use qcqp::{
    min_eigenvalue, qcqp_kkt_residual, solve_qcqp, solve_qcqp_from, solve_qcqp_with, QcqpOptions, QcqpProblem, QcqpSolution,
    PSD_TOLERANCE,
};
pub use sparse::SparseMatrix;

/// Contract tolerance on the certified KKT residual of an optimal solve.
pub const KKT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Failure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveCertificate {
    pub status: SolveStatus,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub wall_time: Duration,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite problem data in {0}")]
    NonFinite(&'static str),
    #[error("quadratic term on a free variable (column {0}) is not supported")]
    FreeQuadratic(usize),
    #[error("quadratic constraint matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotConvex(f64),
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
