//! Laplace approximation of each area's random-effect posterior.
//!
//! For area `i` the unnormalized log posterior is
//!
//! ```text
//! log k(v) = −v²/(2σ²) + Σ_j [ y_j log H(η_j + v) + (1 − y_j) log(1 − H(η_j + v)) ]
//! ```
//!
//! with `η_j = x_j'β`. It is strictly concave, so the mode is unique. The
//! posterior is approximated by `N(v̂, τ̂²)` with `τ̂² = [1/σ² + Σ_j H(1 − H)]⁻¹`
//! evaluated at the mode.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    bernoulli_logit_logpmf, logistic_cdf, AdjustmentConfig, AreaGrouped, AreaId, ModelParams, SmallSample,
};
use crate::optim::scalar::{brent_maximize, newton_polish};

/// Linear predictors and outcomes of the sampled units of one area.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaTerms {
    offsets: Vec<f64>,
    outcomes: Vec<bool>,
}

impl AreaTerms {
    pub fn new(offsets: Vec<f64>, outcomes: Vec<bool>) -> Self {
        assert_eq!(offsets.len(), outcomes.len(), "offsets and outcomes differ in length");
        Self { offsets, outcomes }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn outcomes(&self) -> &[bool] {
        &self.outcomes
    }

    /// Bernoulli log-likelihood of the area's units at random effect `v`.
    pub fn loglik_at(&self, v: f64) -> f64 {
        self.offsets
            .iter()
            .zip(&self.outcomes)
            .map(|(&eta, &y)| bernoulli_logit_logpmf(y, eta + v))
            .sum()
    }

    /// `Σ_j (y_j − H(η_j + v))`.
    pub fn score_at(&self, v: f64) -> f64 {
        self.offsets
            .iter()
            .zip(&self.outcomes)
            .map(|(&eta, &y)| {
                let h = logistic_cdf(eta + v);
                if y {
                    1.0 - h
                } else {
                    -h
                }
            })
            .sum()
    }

    /// `Σ_j H(η_j + v)(1 − H(η_j + v))`.
    pub fn information_at(&self, v: f64) -> f64 {
        self.offsets
            .iter()
            .map(|&eta| {
                let h = logistic_cdf(eta + v);
                h * (1.0 - h)
            })
            .sum()
    }
}

fn require_positive(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!(
            "random-effect variance must be positive, got {sigma2}"
        )));
    }
    Ok(())
}

/// Unnormalized log posterior `log k(v)`.
pub fn log_k(v: f64, terms: &AreaTerms, sigma2: f64) -> Result<f64> {
    require_positive(sigma2)?;
    Ok(-v * v / (2.0 * sigma2) + terms.loglik_at(v))
}

/// `d log k / dv = −v/σ² + Σ_j [y_j (1 − H) − (1 − y_j) H]`.
pub fn log_k_grad(v: f64, terms: &AreaTerms, sigma2: f64) -> Result<f64> {
    require_positive(sigma2)?;
    Ok(-v / sigma2 + terms.score_at(v))
}

/// `d² log k / dv² = −1/σ² − Σ_j H(1 − H)`; always negative.
pub fn log_k_hess(v: f64, terms: &AreaTerms, sigma2: f64) -> Result<f64> {
    require_positive(sigma2)?;
    Ok(-1.0 / sigma2 - terms.information_at(v))
}

/// Mode and curvature-based variance of one area's posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceMode {
    pub v_hat: f64,
    pub tau2_hat: f64,
    /// The mode search stopped at an end of `[−v_bound, v_bound]`.
    pub clipped: bool,
}

/// Locate the posterior mode on `[−v_bound, v_bound]` with golden-section
/// and parabolic interpolation, optionally polished by Newton steps, and
/// return the Laplace summary. An area without units returns the prior.
pub fn laplace_fit(terms: &AreaTerms, sigma2: f64, config: &AdjustmentConfig) -> Result<LaplaceMode> {
    require_positive(sigma2)?;
    if terms.is_empty() {
        return Ok(LaplaceMode {
            v_hat: 0.0,
            tau2_hat: sigma2,
            clipped: false,
        });
    }
    let bound = config.v_bound;
    let objective = |v: f64| -v * v / (2.0 * sigma2) + terms.loglik_at(v);
    let found = brent_maximize(objective, -bound, bound, 1e-10);
    let mut v_hat = found.x;
    if !found.at_bound && config.newton_polish {
        v_hat = newton_polish(
            |v| -v / sigma2 + terms.score_at(v),
            |v| -1.0 / sigma2 - terms.information_at(v),
            v_hat,
            -bound,
            bound,
            8,
        );
    }
    Ok(LaplaceMode {
        v_hat,
        tau2_hat: 1.0 / (1.0 / sigma2 + terms.information_at(v_hat)),
        clipped: found.at_bound,
    })
}

/// Posterior mode by damped Newton iterations. Used where only the mode is
/// needed to centre a quadrature rule.
pub(crate) fn newton_mode(terms: &AreaTerms, sigma2: f64) -> f64 {
    let f = |v: f64| -v * v / (2.0 * sigma2) + terms.loglik_at(v);
    let mut v = 0.0;
    let mut fv = f(v);
    for _ in 0..200 {
        let g = -v / sigma2 + terms.score_at(v);
        let h = 1.0 / sigma2 + terms.information_at(v);
        let mut step = g / h;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = v + step;
            let ft = f(trial);
            if ft >= fv {
                v = trial;
                fv = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.abs() <= 1e-13 * v.abs().max(1.0) {
            break;
        }
    }
    v
}

/// Laplace summary of one area's random-effect posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaPosterior {
    pub area: AreaId,
    pub v_hat: f64,
    pub tau2_hat: f64,
    pub n_tilde: usize,
    #[serde(default)]
    pub clipped: bool,
}

impl AreaPosterior {
    /// Posterior of an area without sample data: the prior `N(0, σ²)`.
    pub fn prior(area: impl Into<AreaId>, sigma2: f64) -> Self {
        Self {
            area: area.into(),
            v_hat: 0.0,
            tau2_hat: sigma2,
            n_tilde: 0,
            clipped: false,
        }
    }
}

/// Laplace summaries of every area in the sample, in area order.
pub fn fit_area_posteriors(
    sample: &SmallSample,
    params: &ModelParams,
    config: &AdjustmentConfig,
) -> Result<Vec<AreaPosterior>> {
    require_positive(params.sigma2)?;
    (0..sample.m_observed())
        .into_par_iter()
        .map(|area| {
            let terms = sample.area_terms(area, &params.beta);
            let mode = laplace_fit(&terms, params.sigma2, config)?;
            Ok(AreaPosterior {
                area: sample.area_ids()[area].clone(),
                v_hat: mode.v_hat,
                tau2_hat: mode.tau2_hat,
                n_tilde: terms.len(),
                clipped: mode.clipped,
            })
        })
        .collect()
}
