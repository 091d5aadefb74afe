//! Best prediction, area aggregation and the direct estimator.
//!
//! The best predictor of a unit outcome is `E[H(x'β + vᵢ) | data]`, taken
//! under the Laplace posterior `N(v̂ᵢ, τ̂ᵢ²)` by Gauss–Hermite quadrature.
//! Areas without sample data fall back to the prior `N(0, σ̂²)`. The
//! empirical best prediction of an area proportion is the weighted mean of
//! the unit predictions over the area's big-sample units.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::FitResult;
use crate::error::{Error, Result};
use crate::laplace::AreaPosterior;
use crate::model::{dot, logistic_cdf, AreaGrouped, AreaId, BigSample, ModelParams, SmallSample};
use crate::quadrature::GaussHermite;

pub const DEFAULT_QUADRATURE_ORDER: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub quadrature_order: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
        }
    }
}

/// Estimates for one area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaEstimate {
    pub area: AreaId,
    pub ebp: f64,
    /// Survey-weighted proportion of the small sample; absent when the area
    /// has no sampled units.
    pub direct: Option<f64>,
    /// Approximate with-replacement linearization SE of `direct`.
    pub direct_se: Option<f64>,
    pub mspe: Option<f64>,
    pub se_ebp: Option<f64>,
    /// `se_ebp / ebp`.
    pub cv: Option<f64>,
}

/// Unit predictor with a prebuilt quadrature rule.
#[derive(Debug, Clone)]
pub struct Predictor {
    rule: GaussHermite,
}

impl Predictor {
    pub fn new(quadrature_order: usize) -> Result<Self> {
        Ok(Self {
            rule: GaussHermite::new(quadrature_order)?,
        })
    }

    /// `E[H(offset + v)]` for `v ~ N(v_hat, tau2)`.
    pub fn expected_logistic(&self, offset: f64, v_hat: f64, tau2: f64) -> f64 {
        if tau2 <= 0.0 {
            return logistic_cdf(offset + v_hat);
        }
        self.rule
            .expect_normal(offset + v_hat, tau2.sqrt(), logistic_cdf)
            .clamp(0.0, 1.0)
    }

    pub fn best_predict(&self, x: &[f64], params: &ModelParams, posterior: &AreaPosterior) -> f64 {
        self.expected_logistic(dot(x, &params.beta), posterior.v_hat, posterior.tau2_hat)
    }

    /// Weighted mean of unit predictions over big-sample area `area`.
    pub fn ebp_area(
        &self,
        big: &BigSample,
        area: usize,
        params: &ModelParams,
        posterior: &AreaPosterior,
    ) -> Result<f64> {
        let members = big.area_members(area);
        if members.is_empty() {
            return Err(Error::Estimation {
                area: big.area_ids()[area].clone(),
                reason: "no big-sample units".into(),
            });
        }
        let total: f64 = members
            .iter()
            .map(|&pos| big.weight(pos) * self.best_predict(&big.records()[pos].x, params, posterior))
            .sum();
        Ok(total.clamp(0.0, 1.0))
    }
}

/// Best prediction of one unit outcome.
pub fn best_predict_unit(
    x: &[f64],
    params: &ModelParams,
    posterior: &AreaPosterior,
    quadrature_order: usize,
) -> Result<f64> {
    if x.len() != params.beta.len() {
        return Err(Error::LengthMismatch {
            expected: params.beta.len(),
            actual: x.len(),
        });
    }
    Ok(Predictor::new(quadrature_order)?.best_predict(x, params, posterior))
}

/// Empirical best prediction of the proportion of big-sample area `area`.
pub fn ebp_area(
    big: &BigSample,
    area: usize,
    params: &ModelParams,
    posterior: &AreaPosterior,
    quadrature_order: usize,
) -> Result<f64> {
    if big.p() != params.beta.len() {
        return Err(Error::LengthMismatch {
            expected: params.beta.len(),
            actual: big.p(),
        });
    }
    Predictor::new(quadrature_order)?.ebp_area(big, area, params, posterior)
}

/// Direct estimate and its standard error for small-sample area `area`.
///
/// Uses the record weights when every unit of the area has one and equal
/// weights otherwise. The SE is absent for a single sampled unit.
pub fn direct_estimate(small: &SmallSample, area: usize) -> (f64, Option<f64>) {
    let records = small.records();
    let members = small.area_members(area);
    let weighted = members.iter().all(|&pos| records[pos].weight.is_some());
    let units: Vec<(f64, f64)> = members
        .iter()
        .map(|&pos| {
            let w = if weighted {
                records[pos].weight.unwrap_or(1.0)
            } else {
                1.0
            };
            (w, if small.outcome(pos) { 1.0 } else { 0.0 })
        })
        .collect();
    let total_w: f64 = units.iter().map(|u| u.0).sum();
    if !(total_w > 0.0) {
        return (0.0, None);
    }
    let est = units.iter().map(|(w, y)| w * y).sum::<f64>() / total_w;
    let n = units.len();
    if n < 2 {
        return (est, None);
    }
    let ss: f64 = units.iter().map(|(w, y)| w * w * (y - est).powi(2)).sum();
    let nf = n as f64;
    (est, Some((ss / (total_w * total_w) * nf / (nf - 1.0)).sqrt()))
}

/// Area estimates together with non-fatal diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateTable {
    pub estimates: Vec<AreaEstimate>,
    pub warnings: Vec<String>,
}

/// EBP for every big-sample area, in big-sample area order.
pub fn ebps(big: &BigSample, fit: &FitResult, predictor: &Predictor) -> Result<Vec<f64>> {
    if big.p() != fit.params.beta.len() {
        return Err(Error::LengthMismatch {
            expected: fit.params.beta.len(),
            actual: big.p(),
        });
    }
    let posteriors: HashMap<&str, &AreaPosterior> = fit.posteriors.iter().map(|p| (p.area.as_str(), p)).collect();
    (0..big.num_areas())
        .into_par_iter()
        .map(|area| {
            let id = &big.area_ids()[area];
            let prior;
            let posterior = match posteriors.get(id.as_str()) {
                Some(p) => *p,
                None => {
                    prior = AreaPosterior::prior(id.clone(), fit.params.sigma2);
                    &prior
                }
            };
            predictor.ebp_area(big, area, &fit.params, posterior)
        })
        .collect()
}

/// One estimate per big-sample area; direct fields are filled where the
/// small sample covers the area. Small-sample areas missing from the big
/// sample produce a warning and no estimate.
pub fn estimate_all(
    small: &SmallSample,
    big: &BigSample,
    fit: &FitResult,
    config: &PredictConfig,
) -> Result<EstimateTable> {
    let predictor = Predictor::new(config.quadrature_order)?;
    let values = ebps(big, fit, &predictor)?;
    let estimates = big
        .area_ids()
        .iter()
        .zip(values)
        .map(|(id, ebp)| {
            let (direct, direct_se) = match small.area_position(id) {
                Some(pos) => {
                    let (d, se) = direct_estimate(small, pos);
                    (Some(d), se)
                }
                None => (None, None),
            };
            AreaEstimate {
                area: id.clone(),
                ebp,
                direct,
                direct_se,
                mspe: None,
                se_ebp: None,
                cv: None,
            }
        })
        .collect();
    let warnings = small
        .area_ids()
        .iter()
        .filter(|id| big.area_position(id).is_none())
        .map(|id| format!("area {id} is in the small sample but not the big sample; no EBP emitted"))
        .collect();
    Ok(EstimateTable { estimates, warnings })
}
