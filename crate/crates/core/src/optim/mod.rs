//! Numerical optimizers used by the fitters.
//!
//! - [`scalar`]: bounded one-dimensional maximization (golden section with
//!   successive parabolic interpolation), plus an optional Newton polish.
//! - [`lbfgsb`]: limited-memory quasi-Newton with box constraints.
//! - [`bfgs`]: dense-inverse-Hessian BFGS, unconstrained.
//! - [`nelder_mead`]: derivative-free simplex search.
//!
//! The multivariate routines minimize. Callers that maximize a
//! log-likelihood negate it.

pub mod bfgs;
pub mod lbfgsb;
pub mod nelder_mead;
pub mod scalar;

/// Outcome of a multivariate minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
