//! Domain types, the logistic link and the likelihood functions.
//!
//! The working model is a mixed logistic regression:
//!
//! ```text
//! y_ij | v_i ~ Bernoulli(H(x_ij'β + v_i)),   v_i ~ N(0, σ²)
//! ```
//!
//! with `H` the logistic cdf. The intercept, when wanted, is an explicit
//! column of `x`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{self, AreaTerms};
use crate::quadrature::GaussHermite;

/// Opaque area key (a state code, a synthetic id, ...).
pub type AreaId = String;

/// One sampled unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub area: AreaId,
    pub y: Option<bool>,
    pub x: Vec<f64>,
    pub weight: Option<f64>,
}

impl UnitRecord {
    pub fn new(area: impl Into<AreaId>, y: Option<bool>, x: Vec<f64>, weight: Option<f64>) -> Self {
        Self {
            area: area.into(),
            y,
            x,
            weight,
        }
    }
}

/// Record positions grouped by area, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
struct AreaIndex {
    ids: Vec<AreaId>,
    members: Vec<Vec<usize>>,
    lookup: HashMap<AreaId, usize>,
}

impl AreaIndex {
    fn build(records: &[UnitRecord]) -> Self {
        let mut ids = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut lookup = HashMap::new();
        for (pos, rec) in records.iter().enumerate() {
            let slot = *lookup.entry(rec.area.clone()).or_insert_with(|| {
                ids.push(rec.area.clone());
                members.push(Vec::new());
                ids.len() - 1
            });
            members[slot].push(pos);
        }
        Self { ids, members, lookup }
    }
}

fn validate_covariates(records: &[UnitRecord]) -> Result<usize> {
    let p = records
        .first()
        .map(|r| r.x.len())
        .ok_or_else(|| Error::InvalidInput("sample has no records".into()))?;
    if p == 0 {
        return Err(Error::InvalidInput("covariate vectors are empty".into()));
    }
    for (pos, rec) in records.iter().enumerate() {
        if rec.x.len() != p {
            return Err(Error::InvalidInput(format!(
                "record {pos} has {} covariates, expected {p}",
                rec.x.len()
            )));
        }
        if rec.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("record {pos} has a non-finite covariate")));
        }
        if let Some(w) = rec.weight {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidInput(format!("record {pos} has invalid weight {w}")));
            }
        }
    }
    Ok(p)
}

/// Units areas have in common, viewed through their area grouping.
pub trait AreaGrouped {
    fn records(&self) -> &[UnitRecord];
    fn area_ids(&self) -> &[AreaId];
    fn area_members(&self, area: usize) -> &[usize];
    fn area_position(&self, id: &str) -> Option<usize>;
    fn num_areas(&self) -> usize {
        self.area_ids().len()
    }
}

/// The small probability sample that carries outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallSample {
    p: usize,
    records: Vec<UnitRecord>,
    index: AreaIndex,
}

impl SmallSample {
    /// Validate and index `records`. Every record needs an outcome and all
    /// covariate vectors must share one length.
    pub fn new(records: Vec<UnitRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("small sample is empty; nothing to fit".into()));
        }
        let p = validate_covariates(&records)?;
        if let Some(pos) = records.iter().position(|r| r.y.is_none()) {
            return Err(Error::InvalidInput(format!("small-sample record {pos} has no outcome")));
        }
        let index = AreaIndex::build(&records);
        Ok(Self { p, records, index })
    }

    /// Number of covariates, intercept column included.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Areas with at least one sampled unit.
    pub fn m_observed(&self) -> usize {
        self.index.ids.len()
    }

    /// ñᵢ for the area at position `area`.
    pub fn area_size(&self, area: usize) -> usize {
        self.index.members[area].len()
    }

    pub fn outcome(&self, pos: usize) -> bool {
        self.records[pos].y.unwrap_or(false)
    }

    /// Number of units with `y = 0` across the sample.
    pub fn zero_count(&self) -> usize {
        self.records.iter().filter(|r| r.y == Some(false)).count()
    }

    /// The variance estimate is only bounded above when some unit has `y = 0`.
    pub fn check_zero_outcome(&self) -> Result<()> {
        if self.zero_count() == 0 {
            return Err(Error::Fit(
                "every sampled outcome equals 1; the adjusted likelihood has no maximum".into(),
            ));
        }
        Ok(())
    }

    /// Copy with the outcomes replaced, aligned with [`Self::records`].
    pub fn with_outcomes(&self, outcomes: &[bool]) -> Result<Self> {
        if outcomes.len() != self.records.len() {
            return Err(Error::LengthMismatch {
                expected: self.records.len(),
                actual: outcomes.len(),
            });
        }
        let mut copy = self.clone();
        for (rec, &y) in copy.records.iter_mut().zip(outcomes) {
            rec.y = Some(y);
        }
        Ok(copy)
    }

    /// Linear predictors `x'β` and outcomes of one area.
    pub fn area_terms(&self, area: usize, beta: &[f64]) -> AreaTerms {
        let members = &self.index.members[area];
        let offsets = members.iter().map(|&pos| dot(&self.records[pos].x, beta)).collect();
        let outcomes = members.iter().map(|&pos| self.outcome(pos)).collect();
        AreaTerms::new(offsets, outcomes)
    }
}

impl AreaGrouped for SmallSample {
    fn records(&self) -> &[UnitRecord] {
        &self.records
    }
    fn area_ids(&self) -> &[AreaId] {
        &self.index.ids
    }
    fn area_members(&self, area: usize) -> &[usize] {
        &self.index.members[area]
    }
    fn area_position(&self, id: &str) -> Option<usize> {
        self.index.lookup.get(id).copied()
    }
}

/// The big weighted sample used for imputation.
///
/// Raw weights are kept as given; normalized weights sum to one per area.
#[derive(Debug, Clone, PartialEq)]
pub struct BigSample {
    p: usize,
    records: Vec<UnitRecord>,
    index: AreaIndex,
    normalized: Vec<f64>,
    raw_sums: Vec<f64>,
}

impl BigSample {
    pub fn new(records: Vec<UnitRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("big sample is empty".into()));
        }
        let p = validate_covariates(&records)?;
        for (pos, rec) in records.iter().enumerate() {
            if rec.y.is_some() {
                return Err(Error::InvalidInput(format!(
                    "big-sample record {pos} carries an outcome"
                )));
            }
            if rec.weight.is_none() {
                return Err(Error::InvalidInput(format!("big-sample record {pos} has no weight")));
            }
        }
        let index = AreaIndex::build(&records);
        let mut normalized = vec![0.0; records.len()];
        let mut raw_sums = Vec::with_capacity(index.ids.len());
        for (id, members) in index.ids.iter().zip(&index.members) {
            let total: f64 = members.iter().map(|&i| records[i].weight.unwrap_or(0.0)).sum();
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::InvalidInput(format!("weights of area {id} sum to {total}")));
            }
            for &i in members {
                normalized[i] = records[i].weight.unwrap_or(0.0) / total;
            }
            raw_sums.push(total);
        }
        Ok(Self {
            p,
            records,
            index,
            normalized,
            raw_sums,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// nᵢ for the area at position `area`.
    pub fn area_size(&self, area: usize) -> usize {
        self.index.members[area].len()
    }

    /// Normalized weight of the record at `pos`.
    pub fn weight(&self, pos: usize) -> f64 {
        self.normalized[pos]
    }

    /// Per-area sums of the raw weights, before normalization.
    pub fn raw_weight_sums(&self) -> &[f64] {
        &self.raw_sums
    }
}

impl AreaGrouped for BigSample {
    fn records(&self) -> &[UnitRecord] {
        &self.records
    }
    fn area_ids(&self) -> &[AreaId] {
        &self.index.ids
    }
    fn area_members(&self, area: usize) -> &[usize] {
        &self.index.members[area]
    }
    fn area_position(&self, id: &str) -> Option<usize> {
        self.index.lookup.get(id).copied()
    }
}

/// γ = (β, σ²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

impl ModelParams {
    pub fn new(beta: Vec<f64>, sigma2: f64) -> Self {
        Self { beta, sigma2 }
    }

    fn require_positive_variance(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Domain(format!(
                "random-effect variance must be positive and finite, got {}",
                self.sigma2
            )));
        }
        Ok(())
    }

    fn require_dimension(&self, p: usize) -> Result<()> {
        if self.beta.len() != p {
            return Err(Error::LengthMismatch {
                expected: p,
                actual: self.beta.len(),
            });
        }
        Ok(())
    }
}

/// Which form of the σ² part of the M-step objective to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum L1Variant {
    /// Each squared draw weighted by the area sample size ñᵢ, with
    /// `(Σ ñᵢ)/2` as the log-variance coefficient.
    #[default]
    PaperForm,
    /// Unweighted squared draws with `m/2` as the log-variance coefficient,
    /// as implied by the complete-data normal likelihood.
    StandardForm,
}

/// Bounds and options for the adjusted likelihood `h(σ²)·L` with `h(σ²) = σ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentConfig {
    pub sigma2_min: f64,
    pub sigma2_max: f64,
    /// Half-width of the posterior-mode search interval.
    pub v_bound: f64,
    pub l1_variant: L1Variant,
    /// Refine the derivative-free posterior mode with Newton steps.
    pub newton_polish: bool,
}

impl Default for AdjustmentConfig {
    fn default() -> Self {
        Self {
            sigma2_min: 1e-6,
            sigma2_max: 25.0,
            v_bound: 10.0,
            l1_variant: L1Variant::PaperForm,
            newton_polish: true,
        }
    }
}

impl AdjustmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_min > 0.0 && self.sigma2_min < self.sigma2_max && self.sigma2_max.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < sigma2_min < sigma2_max, got [{}, {}]",
                self.sigma2_min, self.sigma2_max
            )));
        }
        if !(self.v_bound > 0.0) || !self.v_bound.is_finite() {
            return Err(Error::Config(format!("v_bound must be positive, got {}", self.v_bound)));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic cdf `H(η) = exp(η) / (1 + exp(η))`.
#[inline]
pub fn logistic_cdf(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log H(η)`.
#[inline]
pub fn log_logistic(eta: f64) -> f64 {
    -softplus(-eta)
}

/// `log(1 − H(η))`.
#[inline]
pub fn log1m_logistic(eta: f64) -> f64 {
    -softplus(eta)
}

/// Bernoulli log-probability of `y` under success probability `H(η)`.
#[inline]
pub fn bernoulli_logit_logpmf(y: bool, eta: f64) -> f64 {
    if y {
        log_logistic(eta)
    } else {
        log1m_logistic(eta)
    }
}

/// Log density of `N(0, σ²)` at `v`.
pub fn log_normal_density(v: f64, sigma2: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln() - v * v / (2.0 * sigma2)
}

/// Complete-data log-likelihood at known random effects `v` (one per area,
/// in the sample's area order).
pub fn complete_loglik(params: &ModelParams, sample: &SmallSample, v: &[f64]) -> Result<f64> {
    params.require_positive_variance()?;
    params.require_dimension(sample.p())?;
    if v.len() != sample.m_observed() {
        return Err(Error::LengthMismatch {
            expected: sample.m_observed(),
            actual: v.len(),
        });
    }
    let mut total = 0.0;
    for (area, &vi) in v.iter().enumerate() {
        let terms = sample.area_terms(area, &params.beta);
        total += terms.loglik_at(vi) + log_normal_density(vi, params.sigma2);
    }
    Ok(total)
}

/// Observed (marginal) log-likelihood with each area's random effect
/// integrated out by Gauss–Hermite quadrature of the given order.
///
/// The rule is centred and scaled at the area's Laplace mode and curvature,
/// which keeps it accurate when the area posterior is much narrower than the
/// prior. Diagnostic only; fitting goes through EM.
pub fn observed_loglik(params: &ModelParams, sample: &SmallSample, quadrature_order: usize) -> Result<f64> {
    params.require_positive_variance()?;
    params.require_dimension(sample.p())?;
    let rule = GaussHermite::new(quadrature_order)?;
    Ok(observed_loglik_with(&params.beta, params.sigma2, sample, &rule))
}

/// Observed log-likelihood with a prebuilt rule. `sigma2 = 0` is allowed and
/// gives the plain logistic log-likelihood.
pub(crate) fn observed_loglik_with(beta: &[f64], sigma2: f64, sample: &SmallSample, rule: &GaussHermite) -> f64 {
    (0..sample.m_observed())
        .map(|area| area_log_marginal(&sample.area_terms(area, beta), sigma2, rule))
        .sum()
}

/// `log ∫ Π_j f(y_j | v) g(v; σ²) dv` for one area.
pub(crate) fn area_log_marginal(terms: &AreaTerms, sigma2: f64, rule: &GaussHermite) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    if sigma2 <= 0.0 {
        return terms.loglik_at(0.0);
    }
    let mode = laplace::newton_mode(terms, sigma2);
    let curvature = 1.0 / sigma2 + terms.information_at(mode);
    let scale = std::f64::consts::SQRT_2 / curvature.sqrt();
    // ∫ e^{log k(v)} dv = scale · Σ_k w_k e^{t_k²} e^{log k(mode + scale·t_k)}
    let logs: Vec<f64> = rule
        .nodes()
        .iter()
        .zip(rule.log_weights())
        .map(|(&t, &lw)| {
            let v = mode + scale * t;
            lw + t * t + terms.loglik_at(v) - v * v / (2.0 * sigma2)
        })
        .collect();
    log_sum_exp(&logs) + scale.ln() - 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln()
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Adjusted log-likelihood `log h(σ²) + log L_o` with `h(σ²) = σ²` on
/// `[sigma2_min, sigma2_max]`.
pub fn adjusted_loglik(
    params: &ModelParams,
    sample: &SmallSample,
    config: &AdjustmentConfig,
    quadrature_order: usize,
) -> Result<f64> {
    config.validate()?;
    if !(params.sigma2 >= config.sigma2_min && params.sigma2 <= config.sigma2_max) {
        return Err(Error::Domain(format!(
            "sigma2 = {} lies outside [{}, {}]",
            params.sigma2, config.sigma2_min, config.sigma2_max
        )));
    }
    Ok(params.sigma2.ln() + observed_loglik(params, sample, quadrature_order)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(area: &str, y: bool, x: &[f64]) -> UnitRecord {
        UnitRecord::new(area, Some(y), x.to_vec(), None)
    }

    fn tiny() -> SmallSample {
        SmallSample::new(vec![
            rec("a", true, &[1.0, 0.3]),
            rec("b", false, &[1.0, -1.2]),
            rec("a", false, &[1.0, 0.9]),
            rec("b", true, &[1.0, 0.1]),
            rec("b", true, &[1.0, 2.0]),
        ])
        .unwrap()
    }

    #[test]
    fn logistic_cdf_values() {
        assert_eq!(logistic_cdf(0.0), 0.5);
        // 1/(1+e^0.96) in 40-digit decimal arithmetic
        assert!((logistic_cdf(-0.96) - 0.276_878_194_875_610_18).abs() < 1e-16);
        for eta in [-800.0, -40.0, -3.3, 0.1, 7.0, 40.0, 800.0] {
            let s = logistic_cdf(eta) + logistic_cdf(-eta);
            assert!((s - 1.0).abs() <= 1e-15, "eta={eta}");
            assert!(logistic_cdf(eta).is_finite());
        }
        assert!(logistic_cdf(1e6) <= 1.0 && logistic_cdf(-1e6) >= 0.0);
    }

    #[test]
    fn log_link_is_stable_far_out() {
        assert!((log_logistic(-50.0) + 50.0).abs() < 1e-12);
        assert!((log1m_logistic(50.0) + 50.0).abs() < 1e-12);
        assert!(log_logistic(50.0).abs() < 1e-20);
        assert!(log1m_logistic(-800.0) == 0.0 || log1m_logistic(-800.0).abs() < 1e-300);
    }

    #[test]
    fn sample_indexing() {
        let s = tiny();
        assert_eq!(s.m_observed(), 2);
        assert_eq!(s.area_ids(), &["a".to_string(), "b".to_string()]);
        assert_eq!(s.area_size(0), 2);
        assert_eq!(s.area_size(1), 3);
        assert_eq!(s.area_members(1), &[1, 3, 4]);
        assert_eq!(s.zero_count(), 2);
    }

    #[test]
    fn small_sample_validation() {
        assert!(SmallSample::new(vec![]).is_err());
        let missing_y = UnitRecord::new("a", None, vec![1.0], None);
        assert!(SmallSample::new(vec![missing_y]).is_err());
        let ragged = vec![rec("a", true, &[1.0]), rec("a", false, &[1.0, 2.0])];
        assert!(SmallSample::new(ragged).is_err());
        let neg = UnitRecord::new("a", Some(true), vec![1.0], Some(-1.0));
        assert!(SmallSample::new(vec![neg]).is_err());
    }

    #[test]
    fn all_ones_violates_zero_outcome_condition() {
        let s = SmallSample::new(vec![rec("a", true, &[1.0]), rec("b", true, &[1.0])]).unwrap();
        assert!(matches!(s.check_zero_outcome(), Err(Error::Fit(_))));
    }

    #[test]
    fn big_sample_normalizes_weights() {
        let big = BigSample::new(vec![
            UnitRecord::new("a", None, vec![1.0], Some(100.0)),
            UnitRecord::new("a", None, vec![1.0], Some(150.0)),
            UnitRecord::new("b", None, vec![1.0], Some(2.0)),
        ])
        .unwrap();
        assert_eq!(big.raw_weight_sums(), &[250.0, 2.0]);
        assert!((big.weight(0) - 0.4).abs() < 1e-15);
        assert!((big.weight(1) - 0.6).abs() < 1e-15);
        assert_eq!(big.weight(2), 1.0);
        let bad = BigSample::new(vec![UnitRecord::new("a", None, vec![1.0], Some(0.0))]);
        assert!(bad.is_err());
        let with_y = BigSample::new(vec![UnitRecord::new("a", Some(true), vec![1.0], Some(1.0))]);
        assert!(with_y.is_err());
    }

    #[test]
    fn complete_loglik_hand_value() {
        // m = 1, ñ = 2, all y = 1, β = 0 so H = 0.5, σ² = 1, v = 0
        let s = SmallSample::new(vec![rec("a", true, &[1.0]), rec("a", true, &[1.0])]).unwrap();
        let params = ModelParams::new(vec![0.0], 1.0);
        let got = complete_loglik(&params, &s, &[0.0]).unwrap();
        let want = 2.0 * 0.5_f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn complete_loglik_rejects_bad_inputs() {
        let s = tiny();
        let params = ModelParams::new(vec![0.1, 0.2], 0.0);
        assert!(matches!(
            complete_loglik(&params, &s, &[0.0, 0.0]),
            Err(Error::Domain(_))
        ));
        let params = ModelParams::new(vec![0.1, 0.2], 1.0);
        assert!(matches!(
            complete_loglik(&params, &s, &[0.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn observed_loglik_order_and_domain_checks() {
        let s = tiny();
        let params = ModelParams::new(vec![0.1, 0.2], 0.5);
        assert!(matches!(observed_loglik(&params, &s, 4), Err(Error::Config(_))));
        let zero = ModelParams::new(vec![0.1, 0.2], 0.0);
        assert!(matches!(observed_loglik(&zero, &s, 20), Err(Error::Domain(_))));
    }

    #[test]
    fn observed_collapses_to_bernoulli_at_tiny_variance() {
        let s = SmallSample::new(vec![rec("a", true, &[1.0, 0.4])]).unwrap();
        let beta = vec![-0.3, 1.1];
        let params = ModelParams::new(beta.clone(), 1e-10);
        let got = observed_loglik(&params, &s, 20).unwrap();
        let want = log_logistic(-0.3 + 0.44);
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn adjusted_minus_observed_is_log_sigma2() {
        let s = tiny();
        let cfg = AdjustmentConfig::default();
        for sigma2 in [1e-6, 0.01, 0.7, 3.0, 25.0] {
            let params = ModelParams::new(vec![0.2, -0.4], sigma2);
            let adj = adjusted_loglik(&params, &s, &cfg, 20).unwrap();
            let obs = observed_loglik(&params, &s, 20).unwrap();
            assert!((adj - obs - sigma2.ln()).abs() < 1e-12);
        }
        let outside = ModelParams::new(vec![0.2, -0.4], 30.0);
        assert!(matches!(adjusted_loglik(&outside, &s, &cfg, 20), Err(Error::Domain(_))));
    }

    #[test]
    fn adjusted_at_lower_bound_is_below_log_bound() {
        let s = tiny();
        let cfg = AdjustmentConfig::default();
        let params = ModelParams::new(vec![0.2, -0.4], cfg.sigma2_min);
        let adj = adjusted_loglik(&params, &s, &cfg, 20).unwrap();
        assert!(adj <= cfg.sigma2_min.ln());
    }
}
