//! Unadjusted maximum likelihood by direct maximization of the quadrature
//! log-likelihood, used as a comparison fitter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{generate_bootstrap_outcomes, AreaEffects};
use crate::em::{em_fit, m_step_beta, Draws, EmConfig};
use crate::error::Result;
use crate::laplace::newton_mode;
use crate::model::{log_sum_exp, logistic_cdf, AdjustmentConfig, AreaGrouped, ModelParams, SmallSample};
use crate::optim::lbfgsb;
use crate::quadrature::GaussHermite;
use crate::rng::{derive_seed, role, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainMlConfig {
    pub sigma2_max: f64,
    pub quadrature_order: usize,
    /// σ̂² at or below this counts as a boundary estimate.
    pub boundary_tol: f64,
    pub max_iter: usize,
}

impl Default for PlainMlConfig {
    fn default() -> Self {
        Self {
            sigma2_max: 25.0,
            quadrature_order: 20,
            boundary_tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainMlFit {
    pub params: ModelParams,
    pub loglik: f64,
    pub converged: bool,
    pub boundary: bool,
    /// Reason the fit could not be completed, if any.
    pub failure: Option<String>,
}

impl PlainMlFit {
    /// Boundary estimate, non-convergence or outright failure.
    pub fn flagged(&self) -> bool {
        self.boundary || !self.converged || self.failure.is_some()
    }
}

/// Log marginal of one area with its gradient in `(β, σ²)`.
fn area_value_and_gradient(
    sample: &SmallSample,
    area: usize,
    beta: &[f64],
    sigma2: f64,
    rule: &GaussHermite,
    grad: &mut [f64],
) -> f64 {
    let p = beta.len();
    let terms = sample.area_terms(area, beta);
    let members = sample.area_members(area);
    let xs: Vec<&[f64]> = members.iter().map(|&pos| sample.records()[pos].x.as_slice()).collect();
    let add_score = |v: f64, weight: f64, grad: &mut [f64]| {
        for ((&eta, &y), x) in terms.offsets().iter().zip(terms.outcomes()).zip(&xs) {
            let r = f64::from(u8::from(y)) - logistic_cdf(eta + v);
            for k in 0..p {
                grad[k] += weight * r * x[k];
            }
        }
    };

    if sigma2 < 1e-12 {
        // Limit σ² → 0: d/dσ² log L = ½[(Σ(y − H))² − Σ H(1 − H)].
        add_score(0.0, 1.0, grad);
        let score = terms.score_at(0.0);
        grad[p] += 0.5 * (score * score - terms.information_at(0.0));
        return terms.loglik_at(0.0);
    }

    let mode = newton_mode(&terms, sigma2);
    let curvature = 1.0 / sigma2 + terms.information_at(mode);
    let scale = std::f64::consts::SQRT_2 / curvature.sqrt();
    let nodes: Vec<f64> = rule.nodes().iter().map(|&t| mode + scale * t).collect();
    let logs: Vec<f64> = rule
        .nodes()
        .iter()
        .zip(rule.log_weights())
        .zip(&nodes)
        .map(|((&t, &lw), &v)| lw + t * t + terms.loglik_at(v) - v * v / (2.0 * sigma2))
        .collect();
    let lse = log_sum_exp(&logs);
    let mut second_moment = 0.0;
    for (&l, &v) in logs.iter().zip(&nodes) {
        let w = (l - lse).exp();
        add_score(v, w, grad);
        second_moment += w * v * v;
    }
    grad[p] += second_moment / (2.0 * sigma2 * sigma2) - 1.0 / (2.0 * sigma2);
    lse + scale.ln() - 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln()
}

/// Observed log-likelihood and its gradient at `theta = (β, σ²)`.
pub fn observed_loglik_and_gradient(sample: &SmallSample, theta: &[f64], rule: &GaussHermite) -> (f64, Vec<f64>) {
    let p = theta.len() - 1;
    let (beta, sigma2) = (&theta[..p], theta[p]);
    let mut grad = vec![0.0; p + 1];
    let mut total = 0.0;
    for area in 0..sample.m_observed() {
        total += area_value_and_gradient(sample, area, beta, sigma2, rule, &mut grad);
    }
    (total, grad)
}

/// Maximize the unadjusted observed likelihood over `[0, sigma2_max] × β`.
/// Problems are reported through the flags rather than as errors.
pub fn plain_ml_oracle(sample: &SmallSample, config: &PlainMlConfig) -> PlainMlFit {
    let p = sample.p();
    let rule = match GaussHermite::new(config.quadrature_order) {
        Ok(r) => r,
        Err(e) => {
            return PlainMlFit {
                params: ModelParams::new(vec![f64::NAN; p], f64::NAN),
                loglik: f64::NAN,
                converged: false,
                boundary: false,
                failure: Some(e.to_string()),
            }
        }
    };
    let zero_draws = Draws::new(vec![vec![0.0]; sample.m_observed()]).expect("at least one area");
    let beta0 = m_step_beta(&zero_draws, sample, &vec![0.0; p], &EmConfig::default()).unwrap_or_else(|_| vec![0.0; p]);
    let mut x0 = beta0;
    x0.push(0.5_f64.min(config.sigma2_max));

    let mut lower = vec![-50.0; p + 1];
    let mut upper = vec![50.0; p + 1];
    lower[p] = 0.0;
    upper[p] = config.sigma2_max;
    let scale = 1.0 / sample.len() as f64;
    let result = lbfgsb::minimize(
        |theta, g| {
            let (v, grad) = observed_loglik_and_gradient(sample, theta, &rule);
            for (out, gk) in g.iter_mut().zip(grad) {
                *out = -gk * scale;
            }
            -v * scale
        },
        &x0,
        &lbfgsb::Bounds { lower, upper },
        &lbfgsb::LbfgsbOptions {
            max_iter: config.max_iter,
            pgtol: 1e-7,
            ..Default::default()
        },
    );
    let finite = result.x.iter().all(|v| v.is_finite()) && result.value.is_finite();
    let diverged = result.x[..p].iter().any(|b| b.abs() >= 30.0);
    let sigma2 = result.x[p];
    PlainMlFit {
        params: ModelParams::new(result.x[..p].to_vec(), sigma2),
        loglik: -result.value / scale,
        converged: result.converged && finite && !diverged,
        boundary: sigma2 <= config.boundary_tol,
        failure: (!finite).then(|| "non-finite objective".to_string()),
    }
}

/// Comparison of plain and adjusted ML over parametric-bootstrap replicates
/// of a small sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStudy {
    pub replicates: usize,
    /// Plain-ML fits with a boundary estimate or a convergence problem.
    pub plain_flagged: usize,
    pub plain_boundary: usize,
    /// Adjusted fits with σ̂² on a bound.
    pub adjusted_boundary: usize,
    /// Adjusted fits that errored or did not converge.
    pub adjusted_failures: usize,
    pub plain_sigma2: Vec<f64>,
    pub adjusted_sigma2: Vec<Option<f64>>,
}

impl BoundaryStudy {
    pub fn plain_rate(&self) -> f64 {
        self.plain_flagged as f64 / self.replicates as f64
    }

    pub fn adjusted_rate(&self) -> f64 {
        (self.adjusted_boundary + self.adjusted_failures) as f64 / self.replicates as f64
    }
}

/// Regenerate the outcomes of `small` under `params` `replicates` times and
/// fit each replicate with both plain ML and adjusted ML.
pub fn boundary_study(
    small: &SmallSample,
    params: &ModelParams,
    replicates: usize,
    seed: u64,
    em: &EmConfig,
    adj: &AdjustmentConfig,
    plain: &PlainMlConfig,
) -> Result<BoundaryStudy> {
    let ids = small.area_ids().to_vec();
    let init = ModelParams::new(params.beta.clone(), params.sigma2.clamp(adj.sigma2_min, adj.sigma2_max));
    // Per replicate: the plain fit and the adjusted (σ̂², boundary, converged).
    type Outcome = (PlainMlFit, Option<(f64, bool, bool)>);
    let fits: Vec<Result<Outcome>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let tag = b as u64;
            let effects = AreaEffects::draw(
                ids.clone(),
                params.sigma2,
                &mut substream(seed, &[role::BOOT_EFFECTS, tag]),
            );
            let y = generate_bootstrap_outcomes(
                small,
                &params.beta,
                &effects,
                &mut substream(seed, &[role::BOOT_SMALL, tag]),
            )?;
            let sample = small.with_outcomes(&y)?;
            let plain_fit = plain_ml_oracle(&sample, plain);
            let em_b = EmConfig {
                seed: derive_seed(seed, &[role::BOOT_REFIT, tag]),
                ..em.clone()
            };
            let adjusted = em_fit(&sample, &init, &em_b, adj)
                .ok()
                .map(|f| (f.params.sigma2, f.boundary_flag, f.converged));
            Ok((plain_fit, adjusted))
        })
        .collect();

    let mut study = BoundaryStudy {
        replicates,
        plain_flagged: 0,
        plain_boundary: 0,
        adjusted_boundary: 0,
        adjusted_failures: 0,
        plain_sigma2: Vec::with_capacity(replicates),
        adjusted_sigma2: Vec::with_capacity(replicates),
    };
    for fit in fits {
        let (plain_fit, adjusted) = fit?;
        study.plain_flagged += usize::from(plain_fit.flagged());
        study.plain_boundary += usize::from(plain_fit.boundary);
        study.plain_sigma2.push(plain_fit.params.sigma2);
        match adjusted {
            Some((s2, boundary, converged)) => {
                study.adjusted_boundary += usize::from(boundary);
                study.adjusted_failures += usize::from(!converged);
                study.adjusted_sigma2.push(Some(s2));
            }
            None => {
                study.adjusted_failures += 1;
                study.adjusted_sigma2.push(None);
            }
        }
    }
    Ok(study)
}
