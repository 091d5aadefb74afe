//! Parametric-bootstrap MSPE of the area EBPs.
//!
//! Replicate `b` draws one random effect per area from `N(0, σ̂²)`, shared
//! by the area's small- and big-sample units, and then independent
//! Bernoulli outcomes for both samples under `(β̂, v_b)`. The small-sample
//! outcomes are refitted by adjusted ML (warm-started at `γ̂`) and imputed
//! onto the big sample; the big-sample outcomes give the replicate target
//! `ȳ_bi = Σⱼ wᵢⱼ y_bij`. The MSPE of area `i` is the mean over replicates
//! of `T_bi = (EBP_bi − ȳ_bi)²`.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{em_fit, EmConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::{dot, logistic_cdf, AdjustmentConfig, AreaGrouped, AreaId, BigSample, SmallSample};
use crate::predict::{ebps, AreaEstimate, Predictor, DEFAULT_QUADRATURE_ORDER};
use crate::rng::{derive_seed, role, substream};

/// Replicate failure rate above which the bootstrap aborts.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub b_replicates: usize,
    pub seed: u64,
    pub em_config: EmConfig,
    pub adj_config: AdjustmentConfig,
    /// Keep replicates whose refit did not converge instead of dropping them.
    pub keep_failures: bool,
    pub quadrature_order: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            b_replicates: 100,
            seed: 0,
            em_config: EmConfig::default(),
            adj_config: AdjustmentConfig::default(),
            keep_failures: false,
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplicate {
    pub replicate: usize,
    pub reason: String,
    /// Whether the replicate still contributed to the MSPE.
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MspeResult {
    /// Big-sample areas, in order.
    pub areas: Vec<AreaId>,
    pub mspe: Vec<f64>,
    /// Monte-Carlo error `√(Var(T)/B)` per area.
    pub mce: Vec<f64>,
    /// `terms[i][k]` is `T` of area `i` in the `k`-th retained replicate.
    pub terms: Vec<Vec<f64>>,
    /// Indices of the retained replicates.
    pub retained: Vec<usize>,
    pub failed: Vec<FailedReplicate>,
    /// Retained replicates whose refit put σ̂² on a bound.
    pub boundary_cases: usize,
}

/// Random effects keyed by area.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaEffects {
    ids: Vec<AreaId>,
    values: Vec<f64>,
    lookup: HashMap<AreaId, usize>,
}

impl AreaEffects {
    pub fn new(ids: Vec<AreaId>, values: Vec<f64>) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: ids.len(),
                actual: values.len(),
            });
        }
        let lookup = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self { ids, values, lookup })
    }

    /// One draw from `N(0, σ²)` per id, in order. `σ² = 0` gives exact zeros.
    pub fn draw(ids: Vec<AreaId>, sigma2: f64, rng: &mut impl Rng) -> Self {
        let sd = sigma2.max(0.0).sqrt();
        let values = ids
            .iter()
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                if sd > 0.0 {
                    sd * z
                } else {
                    0.0
                }
            })
            .collect();
        Self::new(ids, values).expect("lengths match")
    }

    pub fn ids(&self) -> &[AreaId] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.lookup.get(id).map(|&i| self.values[i])
    }
}

/// Big-sample areas followed by small-only areas.
pub fn union_area_ids(small: &SmallSample, big: &BigSample) -> Vec<AreaId> {
    let mut ids = big.area_ids().to_vec();
    ids.extend(
        small
            .area_ids()
            .iter()
            .filter(|id| big.area_position(id).is_none())
            .cloned(),
    );
    ids
}

/// Bernoulli outcomes `y ~ Bern(H(x'β + v_area))` for every record of
/// `sample`, in record order.
pub fn generate_bootstrap_outcomes<S: AreaGrouped>(
    sample: &S,
    beta: &[f64],
    effects: &AreaEffects,
    rng: &mut impl Rng,
) -> Result<Vec<bool>> {
    let per_area: Vec<f64> = sample
        .area_ids()
        .iter()
        .map(|id| {
            effects
                .get(id)
                .ok_or_else(|| Error::InvalidInput(format!("no random effect drawn for area {id}")))
        })
        .collect::<Result<_>>()?;
    let mut area_of = vec![0; sample.records().len()];
    for area in 0..sample.num_areas() {
        for &pos in sample.area_members(area) {
            area_of[pos] = area;
        }
    }
    Ok(sample
        .records()
        .iter()
        .zip(&area_of)
        .map(|(rec, &area)| {
            let theta = logistic_cdf(dot(&rec.x, beta) + per_area[area]);
            rng.random::<f64>() < theta
        })
        .collect())
}

/// `ȳ_i = Σⱼ wᵢⱼ yᵢⱼ` per big-sample area with normalized weights.
pub fn weighted_area_means(big: &BigSample, outcomes: &[bool]) -> Vec<f64> {
    (0..big.num_areas())
        .map(|area| {
            big.area_members(area)
                .iter()
                .filter(|&&pos| outcomes[pos])
                .map(|&pos| big.weight(pos))
                .sum::<f64>()
                .min(1.0)
        })
        .collect()
}

/// `T_i = (ebp_i − target_i)²`.
pub fn replicate_terms(ebp: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if ebp.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: ebp.len(),
            actual: target.len(),
        });
    }
    Ok(ebp.iter().zip(target).map(|(e, t)| (e - t).powi(2)).collect())
}

/// Per-area mean of the replicate terms.
pub fn mspe_from_terms(terms: &[Vec<f64>]) -> Vec<f64> {
    terms.iter().map(|t| t.iter().sum::<f64>() / t.len() as f64).collect()
}

/// Per-area Monte-Carlo error `√(s²/B)` with the `B − 1` variance divisor.
pub fn mce(terms: &[Vec<f64>]) -> Result<Vec<f64>> {
    terms
        .iter()
        .map(|t| {
            let b = t.len();
            if b < 2 {
                return Err(Error::Config(format!(
                    "Monte-Carlo error needs at least 2 replicates, got {b}"
                )));
            }
            let bf = b as f64;
            let mean = t.iter().sum::<f64>() / bf;
            let var = t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (bf - 1.0);
            Ok((var / bf).sqrt())
        })
        .collect()
}

enum Replicate {
    Done {
        terms: Vec<f64>,
        boundary: bool,
        failure: Option<String>,
    },
    Failed(String),
}

fn run_replicate(
    b: usize,
    small: &SmallSample,
    big: &BigSample,
    fit: &FitResult,
    ids: &[AreaId],
    predictor: &Predictor,
    config: &BootstrapConfig,
) -> Result<Replicate> {
    let seed = config.seed;
    let tag = b as u64;
    let params = &fit.params;
    let effects = AreaEffects::draw(
        ids.to_vec(),
        params.sigma2,
        &mut substream(seed, &[role::BOOT_EFFECTS, tag]),
    );
    let y_small = generate_bootstrap_outcomes(
        small,
        &params.beta,
        &effects,
        &mut substream(seed, &[role::BOOT_SMALL, tag]),
    )?;
    let y_big = generate_bootstrap_outcomes(
        big,
        &params.beta,
        &effects,
        &mut substream(seed, &[role::BOOT_BIG, tag]),
    )?;
    let target = weighted_area_means(big, &y_big);

    let resampled = small.with_outcomes(&y_small)?;
    let em = EmConfig {
        seed: derive_seed(seed, &[role::BOOT_REFIT, tag]),
        ..config.em_config.clone()
    };
    let refit = match em_fit(&resampled, params, &em, &config.adj_config) {
        Ok(r) => r,
        Err(e) => return Ok(Replicate::Failed(e.to_string())),
    };
    let failure = (!refit.converged).then(|| format!("EM did not converge within {} iterations", refit.iterations));
    if failure.is_some() && !config.keep_failures {
        return Ok(Replicate::Failed(failure.unwrap_or_default()));
    }
    let ebp = ebps(big, &refit, predictor)?;
    Ok(Replicate::Done {
        terms: replicate_terms(&ebp, &target)?,
        boundary: refit.boundary_flag,
        failure,
    })
}

/// Parametric-bootstrap MSPE for every big-sample area.
///
/// Replicates run in parallel and are merged in index order, so the result
/// depends only on the inputs and the seed.
pub fn bootstrap_mspe(
    small: &SmallSample,
    big: &BigSample,
    fit: &FitResult,
    config: &BootstrapConfig,
) -> Result<MspeResult> {
    if config.b_replicates < 2 {
        return Err(Error::Config(format!(
            "b_replicates must be at least 2, got {}",
            config.b_replicates
        )));
    }
    config.em_config.validate()?;
    config.adj_config.validate()?;
    if big.p() != small.p() || fit.params.beta.len() != small.p() {
        return Err(Error::LengthMismatch {
            expected: small.p(),
            actual: big.p(),
        });
    }
    let predictor = Predictor::new(config.quadrature_order)?;
    let ids = union_area_ids(small, big);
    let outcomes: Vec<Result<Replicate>> = (0..config.b_replicates)
        .into_par_iter()
        .map(|b| run_replicate(b, small, big, fit, &ids, &predictor, config))
        .collect();

    let m = big.num_areas();
    let mut terms = vec![Vec::new(); m];
    let mut retained = Vec::new();
    let mut failed = Vec::new();
    let mut boundary_cases = 0;
    for (b, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            Replicate::Done {
                terms: t,
                boundary,
                failure,
            } => {
                for (acc, v) in terms.iter_mut().zip(t) {
                    acc.push(v);
                }
                retained.push(b);
                boundary_cases += usize::from(boundary);
                if let Some(reason) = failure {
                    failed.push(FailedReplicate {
                        replicate: b,
                        reason,
                        retained: true,
                    });
                }
            }
            Replicate::Failed(reason) => failed.push(FailedReplicate {
                replicate: b,
                reason,
                retained: false,
            }),
        }
    }
    if failed.len() as f64 > MAX_FAILURE_RATE * config.b_replicates as f64 || retained.len() < 2 {
        return Err(Error::TooManyFailures {
            failed: failed.len(),
            total: config.b_replicates,
        });
    }
    Ok(MspeResult {
        areas: big.area_ids().to_vec(),
        mspe: mspe_from_terms(&terms),
        mce: mce(&terms)?,
        terms,
        retained,
        failed,
        boundary_cases,
    })
}

/// Fill `mspe`, `se_ebp` and `cv` of the matching estimates.
pub fn apply_mspe(estimates: &mut [AreaEstimate], result: &MspeResult) {
    let lookup: HashMap<&str, f64> = result
        .areas
        .iter()
        .map(String::as_str)
        .zip(result.mspe.iter().copied())
        .collect();
    for est in estimates {
        if let Some(&mspe) = lookup.get(est.area.as_str()) {
            let se = mspe.sqrt();
            est.mspe = Some(mspe);
            est.se_ebp = Some(se);
            est.cv = (est.ebp > 0.0).then(|| se / est.ebp);
        }
    }
}

/// MSPE result restricted to its first `b` retained replicates. Replicates
/// are keyed by index, so this equals a run with `b` replicates whenever no
/// replicate was dropped.
pub fn truncate(result: &MspeResult, b: usize) -> Result<MspeResult> {
    let keep = b.min(result.retained.len());
    let terms: Vec<Vec<f64>> = result.terms.iter().map(|t| t[..keep].to_vec()).collect();
    let cutoff = result.retained.get(keep).copied().unwrap_or(usize::MAX);
    Ok(MspeResult {
        areas: result.areas.clone(),
        mspe: mspe_from_terms(&terms),
        mce: mce(&terms)?,
        terms,
        retained: result.retained[..keep].to_vec(),
        failed: result.failed.iter().filter(|f| f.replicate < cutoff).cloned().collect(),
        boundary_cases: result.boundary_cases,
    })
}
