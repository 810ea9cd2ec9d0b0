//! Weighted Fokker–Planck solver for `φ = ρ/π` with `π = e^{-L/σ}`.
//!
//! The generator `𝔏φ = σΔφ - ∇L·∇φ` is discretized by cell-centered finite
//! volumes with no-flux walls. Face conductances `σ π_f / h²` are symmetric in
//! `L²(π)`, so the discrete operator is self-adjoint, kills constants and keeps
//! `φ ≥ 0` under backward Euler.

mod banded;
pub mod conditions;
pub mod crosscheck;
pub mod functionals;
pub mod generator;
pub mod grid;
pub mod limit;
pub mod stepping;

use thiserror::Error;

pub use banded::{BandLu, BandMatrix};
pub use conditions::{condition_ab_check, ConditionReport, Lyapunov, NamedLyapunov};
pub use crosscheck::{density_crosscheck, CrosscheckReport};
pub use functionals::{
    apply_fk, mass, pi_domain_mass, weighted_dirichlet, weighted_l2_norm, window_mass, FkResult, FpRecord,
};
pub use generator::{build_generator, Generator};
pub use grid::Grid;
pub use limit::{phi_limit_report, Integrability, LimitReport};
pub use stepping::{evolve, step_phi, ImplicitStepper, Schedule, Scheme, WeightedField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{:.1}% of nodes underflow in exp(-L/sigma)", fraction * 100.0)]
    WeightUnderflow { fraction: f64 },
    #[error("implicit solve residual {residual:e}")]
    SolverDivergence { residual: f64 },
    #[error("explicit step dt = {dt} exceeds the stability limit {limit}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("functional order {0} exceeds the supported maximum")]
    OrderTooHigh(u32),
    #[error("record times span a factor {span:.3}, need at least 10")]
    WindowTooShort { span: f64 },
    #[error("snapshot time {snapshot} and field time {field} differ by more than dt = {dt}")]
    TimeMismatch { snapshot: f64, field: f64, dt: f64 },
}
