//! Adjusted maximum likelihood by Monte-Carlo EM.
//!
//! Each iteration:
//!
//! 1. fits the Laplace approximation `N(v̂ᵢ, τ̂ᵢ²)` of every area posterior
//!    at the current parameters;
//! 2. draws `R` values `ṽᵣᵢ = v̂ᵢ + τ̂ᵢ zᵣᵢ` per area from a per-iteration
//!    substream;
//! 3. maximizes the σ² part `(1/R) Σᵣ l₁(σ²|ṽᵣ)` of the Monte-Carlo
//!    Q-function on `[sigma2_min, sigma2_max]`;
//! 4. maximizes the β part `(1/R) Σᵣ l₂(β|y, x, ṽᵣ)`, the Bernoulli
//!    log-likelihood averaged over draws, with the configured optimizer.
//!
//! Iteration stops once every parameter moves by less than `tol` in
//! absolute value.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{fit_area_posteriors, AreaPosterior};
use crate::model::{AdjustmentConfig, AreaGrouped, L1Variant, ModelParams, SmallSample};
use crate::optim::{bfgs, lbfgsb, nelder_mead, scalar};
use crate::rng::{role, substream};

/// Box used by the bounded β optimizer.
const COEF_BOX: f64 = 50.0;
/// Coefficients beyond this magnitude are treated as diverging.
const SEPARATION_LIMIT: f64 = 30.0;
/// Distance from a σ² bound that counts as a boundary estimate.
pub const BOUNDARY_EPS: f64 = 1e-9;

/// Multivariate optimizer for the β M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaOptimizer {
    NelderMead,
    QuasiNewton,
    /// L-BFGS-B with the objective and gradient evaluated in parallel
    /// across areas.
    #[default]
    BoundedQuasiNewtonParallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Monte-Carlo draws per area per iteration.
    pub r_draws: usize,
    /// Convergence threshold on the absolute change of every parameter.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub beta_optimizer: BetaOptimizer,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            r_draws: 100,
            tol: 0.01,
            max_iter: 200,
            seed: 0,
            beta_optimizer: BetaOptimizer::default(),
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_draws == 0 {
            return Err(Error::Config("r_draws must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameter values after one EM iteration (iteration 0 is the start).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// Largest absolute parameter change from the previous iterate.
    pub max_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    /// Laplace summaries at the final parameters, in small-sample area order.
    pub posteriors: Vec<AreaPosterior>,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    /// σ̂² lies within [`BOUNDARY_EPS`] of an optimization bound.
    pub boundary_flag: bool,
    /// Areas whose final posterior mode hit the search bound.
    pub clipped_modes: usize,
}

/// Monte-Carlo draws of the random effects, `R` per area.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    r: usize,
    values: Vec<Vec<f64>>,
}

impl Draws {
    /// `values[i]` holds the draws of area `i`; all areas need the same count.
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let r = values.first().map_or(0, Vec::len);
        if r == 0 {
            return Err(Error::InvalidInput("draws must be non-empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| v.len() != r) {
            return Err(Error::LengthMismatch {
                expected: r,
                actual: bad.len(),
            });
        }
        Ok(Self { r, values })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn num_areas(&self) -> usize {
        self.values.len()
    }

    pub fn area(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            r: self.r,
            values: self.values.iter().map(|v| v.iter().map(|x| x * c).collect()).collect(),
        }
    }
}

/// Draw `r` values per area from `N(v̂ᵢ, τ̂ᵢ²)`. The stream of area `i` is
/// keyed by `(seed, iteration, i)`.
pub fn draw_from_posteriors(posteriors: &[AreaPosterior], r: usize, seed: u64, iteration: u64) -> Draws {
    let values = posteriors
        .par_iter()
        .enumerate()
        .map(|(i, post)| {
            let mut rng = substream(seed, &[role::E_STEP, iteration, i as u64]);
            let sd = post.tau2_hat.max(0.0).sqrt();
            (0..r)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    post.v_hat + sd * z
                })
                .collect()
        })
        .collect();
    Draws { r, values }
}

/// Output of one E-step.
#[derive(Debug, Clone)]
pub struct EStep {
    pub posteriors: Vec<AreaPosterior>,
    pub draws: Draws,
}

/// Laplace fits at `params` followed by `R` draws per area.
pub fn e_step(
    sample: &SmallSample,
    params: &ModelParams,
    em: &EmConfig,
    adj: &AdjustmentConfig,
    iteration: u64,
) -> Result<EStep> {
    em.validate()?;
    let posteriors = fit_area_posteriors(sample, params, adj)?;
    let draws = draw_from_posteriors(&posteriors, em.r_draws, em.seed, iteration);
    Ok(EStep { posteriors, draws })
}

/// Sufficient statistics of the σ² objective: `S` (the averaged weighted sum
/// of squared draws) and `N` (the log-variance coefficient times two).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaStatistics {
    pub s: f64,
    pub n: f64,
}

pub fn sigma_statistics(draws: &Draws, sample: &SmallSample, variant: L1Variant) -> Result<SigmaStatistics> {
    if draws.num_areas() != sample.m_observed() {
        return Err(Error::LengthMismatch {
            expected: sample.m_observed(),
            actual: draws.num_areas(),
        });
    }
    let r = draws.r() as f64;
    let mut s = 0.0;
    let mut n = 0.0;
    for area in 0..draws.num_areas() {
        let weight = match variant {
            L1Variant::PaperForm => sample.area_size(area) as f64,
            L1Variant::StandardForm => 1.0,
        };
        s += weight * draws.area(area).iter().map(|v| v * v).sum::<f64>() / r;
        n += weight;
    }
    Ok(SigmaStatistics { s, n })
}

/// `(1/R) Σᵣ l₁(σ²|ṽᵣ) = log σ² − (N/2) log σ² − S/(2σ²)`.
pub fn l1_objective(sigma2: f64, stats: SigmaStatistics) -> f64 {
    sigma2.ln() - 0.5 * stats.n * sigma2.ln() - stats.s / (2.0 * sigma2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaStep {
    pub sigma2: f64,
    pub at_bound: bool,
}

/// σ² M-step: bounded scalar maximization of the averaged `l₁`.
pub fn m_step_sigma(draws: &Draws, sample: &SmallSample, config: &AdjustmentConfig) -> Result<SigmaStep> {
    config.validate()?;
    let stats = sigma_statistics(draws, sample, config.l1_variant)?;
    if stats.n <= 2.0 {
        return Err(Error::Fit(format!(
            "the variance objective needs a coefficient N > 2, got N = {} ({:?})",
            stats.n, config.l1_variant
        )));
    }
    let (lo, hi) = (config.sigma2_min, config.sigma2_max);
    let found = scalar::brent_maximize(|s2| l1_objective(s2, stats), lo, hi, 1e-12);
    let sigma2 = if found.at_bound {
        found.x
    } else {
        let c = 1.0 - 0.5 * stats.n;
        scalar::newton_polish(
            |s2| c / s2 + stats.s / (2.0 * s2 * s2),
            |s2| -c / (s2 * s2) - stats.s / (s2 * s2 * s2),
            found.x,
            lo,
            hi,
            8,
        )
    };
    Ok(SigmaStep {
        sigma2,
        at_bound: found.at_bound,
    })
}

#[inline]
fn bernoulli_terms(y: bool, eta: f64) -> (f64, f64) {
    // log-pmf and residual y − H(η) sharing one exponential
    let e = (-eta.abs()).exp();
    let log1pe = e.ln_1p();
    let h = if eta >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    let softplus_pos = eta.max(0.0) + log1pe; // log(1 + e^η)
    if y {
        (eta - softplus_pos, 1.0 - h)
    } else {
        (-softplus_pos, -h)
    }
}

fn area_l2(sample: &SmallSample, area: usize, beta: &[f64], draws: &[f64]) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; beta.len()];
    for &pos in sample.area_members(area) {
        let rec = &sample.records()[pos];
        let offset: f64 = rec.x.iter().zip(beta).map(|(a, b)| a * b).sum();
        let y = sample.outcome(pos);
        let mut resid = 0.0;
        for &v in draws {
            let (lp, r) = bernoulli_terms(y, offset + v);
            value += lp;
            resid += r;
        }
        for (g, xk) in grad.iter_mut().zip(&rec.x) {
            *g += resid * xk;
        }
    }
    (value, grad)
}

/// `(1/R) Σᵣ l₂(β|y, x, ṽᵣ)` and its gradient `(1/R) Σᵣ Σᵢⱼ xᵢⱼ (yᵢⱼ − H(xᵢⱼ'β + ṽᵣᵢ))`.
///
/// Per-area partial sums are combined in area order, so the parallel and
/// sequential paths give bit-identical results.
pub fn l2_value_and_gradient(beta: &[f64], draws: &Draws, sample: &SmallSample, parallel: bool) -> (f64, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = if parallel {
        (0..sample.m_observed())
            .into_par_iter()
            .map(|a| area_l2(sample, a, beta, draws.area(a)))
            .collect()
    } else {
        (0..sample.m_observed())
            .map(|a| area_l2(sample, a, beta, draws.area(a)))
            .collect()
    };
    let r = draws.r() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; beta.len()];
    for (v, g) in parts {
        value += v;
        for (acc, gk) in grad.iter_mut().zip(g) {
            *acc += gk;
        }
    }
    grad.iter_mut().for_each(|g| *g /= r);
    (value / r, grad)
}

pub fn l2_objective(beta: &[f64], draws: &Draws, sample: &SmallSample) -> f64 {
    l2_value_and_gradient(beta, draws, sample, false).0
}

pub fn l2_gradient(beta: &[f64], draws: &Draws, sample: &SmallSample) -> Vec<f64> {
    l2_value_and_gradient(beta, draws, sample, false).1
}

/// Numerical rank of the small-sample design matrix.
pub fn design_rank(sample: &SmallSample) -> usize {
    let p = sample.p();
    let mut gram = vec![0.0; p * p];
    for rec in sample.records() {
        for i in 0..p {
            for j in 0..p {
                gram[i * p + j] += rec.x[i] * rec.x[j];
            }
        }
    }
    // Correlation scaling, then pivoted Cholesky.
    let diag: Vec<f64> = (0..p).map(|i| gram[i * p + i]).collect();
    if diag.iter().any(|&d| d <= 0.0) {
        return diag.iter().filter(|&&d| d > 0.0).count().min(p.saturating_sub(1));
    }
    for i in 0..p {
        for j in 0..p {
            gram[i * p + j] /= (diag[i] * diag[j]).sqrt();
        }
    }
    let mut remaining: Vec<usize> = (0..p).collect();
    let mut rank = 0;
    while !remaining.is_empty() {
        let (slot, &piv) = remaining
            .iter()
            .enumerate()
            .max_by(|a, b| gram[a.1 * p + a.1].total_cmp(&gram[b.1 * p + b.1]))
            .expect("non-empty");
        let d = gram[piv * p + piv];
        if d <= 1e-10 {
            break;
        }
        rank += 1;
        remaining.swap_remove(slot);
        for &i in &remaining {
            for &j in &remaining {
                gram[i * p + j] -= gram[i * p + piv] * gram[piv * p + j] / d;
            }
        }
    }
    rank
}

fn require_full_rank(sample: &SmallSample) -> Result<()> {
    let rank = design_rank(sample);
    if rank < sample.p() {
        return Err(Error::RankDeficient { rank, p: sample.p() });
    }
    Ok(())
}

/// β M-step: maximize `(1/R) Σᵣ l₂(β|y, x, ṽᵣ)` starting from `beta_init`.
pub fn m_step_beta(draws: &Draws, sample: &SmallSample, beta_init: &[f64], config: &EmConfig) -> Result<Vec<f64>> {
    if draws.num_areas() != sample.m_observed() {
        return Err(Error::LengthMismatch {
            expected: sample.m_observed(),
            actual: draws.num_areas(),
        });
    }
    if beta_init.len() != sample.p() {
        return Err(Error::LengthMismatch {
            expected: sample.p(),
            actual: beta_init.len(),
        });
    }
    require_full_rank(sample)?;
    let zeros = sample.zero_count();
    if zeros == 0 || zeros == sample.len() {
        return Err(Error::Separation {
            last: beta_init.to_vec(),
        });
    }
    // Per-unit scaling keeps optimizer tolerances independent of sample size.
    let scale = 1.0 / sample.len() as f64;
    let parallel = config.beta_optimizer == BetaOptimizer::BoundedQuasiNewtonParallel;
    let fg = |beta: &[f64], grad: &mut [f64]| {
        let (v, g) = l2_value_and_gradient(beta, draws, sample, parallel);
        for (out, gk) in grad.iter_mut().zip(g) {
            *out = -gk * scale;
        }
        -v * scale
    };
    let result = match config.beta_optimizer {
        BetaOptimizer::BoundedQuasiNewtonParallel => lbfgsb::minimize(
            fg,
            beta_init,
            &lbfgsb::Bounds::uniform(beta_init.len(), -COEF_BOX, COEF_BOX),
            &lbfgsb::LbfgsbOptions::default(),
        ),
        BetaOptimizer::QuasiNewton => bfgs::minimize(fg, beta_init, &bfgs::BfgsOptions::default()),
        BetaOptimizer::NelderMead => nelder_mead::minimize(
            |beta| -l2_value_and_gradient(beta, draws, sample, false).0 * scale,
            beta_init,
            &nelder_mead::NelderMeadOptions {
                xtol: 1e-7,
                ..Default::default()
            },
        ),
    };
    if result.x.iter().any(|b| !b.is_finite()) || !result.value.is_finite() {
        return Err(Error::NonConvergence {
            iterations: result.iterations,
            last: result.x,
        });
    }
    if result.x.iter().any(|b| b.abs() >= SEPARATION_LIMIT) {
        return Err(Error::Separation { last: result.x });
    }
    if !result.converged {
        return Err(Error::NonConvergence {
            iterations: result.iterations,
            last: result.x,
        });
    }
    Ok(result.x)
}

/// Default starting values: β from a plain logistic regression that ignores
/// the random effects, σ² = 0.5 (clamped into the adjustment bounds).
pub fn initial_params(sample: &SmallSample, em: &EmConfig, adj: &AdjustmentConfig) -> Result<ModelParams> {
    let zero_draws = Draws::new(vec![vec![0.0]; sample.m_observed()])?;
    let beta = m_step_beta(&zero_draws, sample, &vec![0.0; sample.p()], em)?;
    Ok(ModelParams::new(beta, 0.5_f64.clamp(adj.sigma2_min, adj.sigma2_max)))
}

/// Fit the mixed logistic model by adjusted maximum likelihood.
///
/// Exhausting `max_iter` is not an error: the result comes back with
/// `converged = false`.
pub fn em_fit(sample: &SmallSample, init: &ModelParams, em: &EmConfig, adj: &AdjustmentConfig) -> Result<FitResult> {
    em.validate()?;
    adj.validate()?;
    sample.check_zero_outcome()?;
    if init.beta.len() != sample.p() {
        return Err(Error::LengthMismatch {
            expected: sample.p(),
            actual: init.beta.len(),
        });
    }
    if !(init.sigma2 >= adj.sigma2_min && init.sigma2 <= adj.sigma2_max) {
        return Err(Error::Domain(format!(
            "initial sigma2 = {} lies outside [{}, {}]",
            init.sigma2, adj.sigma2_min, adj.sigma2_max
        )));
    }
    require_full_rank(sample)?;

    let mut params = init.clone();
    let mut trace = vec![IterationRecord {
        iteration: 0,
        beta: params.beta.clone(),
        sigma2: params.sigma2,
        max_delta: None,
    }];
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=em.max_iter {
        iterations = t;
        let step = e_step(sample, &params, em, adj, t as u64)?;
        let sigma = m_step_sigma(&step.draws, sample, adj)?;
        let beta = m_step_beta(&step.draws, sample, &params.beta, em)?;
        let delta = params
            .beta
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold((params.sigma2 - sigma.sigma2).abs(), f64::max);
        params = ModelParams::new(beta, sigma.sigma2);
        trace.push(IterationRecord {
            iteration: t,
            beta: params.beta.clone(),
            sigma2: params.sigma2,
            max_delta: Some(delta),
        });
        if delta < em.tol {
            converged = true;
            break;
        }
    }

    let posteriors = fit_area_posteriors(sample, &params, adj)?;
    let clipped_modes = posteriors.iter().filter(|p| p.clipped).count();
    let boundary_flag = (params.sigma2 - adj.sigma2_min).abs() <= BOUNDARY_EPS
        || (adj.sigma2_max - params.sigma2).abs() <= BOUNDARY_EPS;
    Ok(FitResult {
        params,
        posteriors,
        iterations,
        trace,
        converged,
        boundary_flag,
        clipped_modes,
    })
}
