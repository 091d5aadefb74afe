//! Small-area proportion estimation by statistical data integration.
//!
//! A mixed logistic working model is fitted to a small probability sample
//! that carries the binary outcome. Fitting uses adjusted maximum likelihood:
//! the observed likelihood is multiplied by `h(σ²) = σ²`, so the variance
//! estimate can never sit on the zero boundary. The adjusted likelihood is
//! maximized with a Monte-Carlo EM loop whose E-step samples each area's
//! random effect from a Laplace approximation of its posterior.
//!
//! The fitted model then imputes empirical best predictions onto every unit
//! of a big weighted sample that shares the covariates but lacks the outcome;
//! weighted averages of those predictions give area-level proportions.
//! Uncertainty comes from a parametric bootstrap estimate of the mean squared
//! prediction error.
//!
//! Module map:
//!
//! - [`model`]: samples, parameters, the logistic link and the likelihoods.
//! - [`laplace`]: per-area posterior mode and curvature.
//! - [`em`]: the adjusted-ML Monte-Carlo EM fitter.
//! - [`predict`]: best prediction, area aggregation and direct estimates.
//! - [`bootstrap`]: parametric-bootstrap MSPE and Monte-Carlo error.
//! - [`sim`]: synthetic designs, evaluation metrics and brute-force oracles.

#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod em;
mod error;
pub mod laplace;
pub mod model;
pub mod optim;
pub mod predict;
pub mod quadrature;
pub mod rng;
pub mod sim;

pub use bootstrap::{BootstrapConfig, MspeResult};
pub use em::{em_fit, BetaOptimizer, EmConfig, FitResult};
pub use error::{Error, Result};
pub use laplace::AreaPosterior;
pub use model::{AdjustmentConfig, AreaId, BigSample, L1Variant, ModelParams, SmallSample, UnitRecord};
pub use predict::{estimate_all, AreaEstimate};
