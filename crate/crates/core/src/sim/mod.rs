//! Synthetic worlds, evaluation metrics and reference fitters.
//!
//! A world draws one random effect per area, covariates per unit, and
//! Bernoulli outcomes for a small sample (outcomes kept) and a big weighted
//! sample (outcomes only used for the true weighted area proportions).

pub mod oracles;
mod plain_ml;

pub use plain_ml::{boundary_study, plain_ml_oracle, BoundaryStudy, PlainMlConfig, PlainMlFit};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bootstrap::AreaEffects;
use crate::error::{Error, Result};
use crate::model::{logistic_cdf, AreaId, BigSample, ModelParams, SmallSample, UnitRecord};
use crate::rng::{role, substream};

/// Distribution of one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CovariateSpec {
    StandardNormal,
    /// Categorical with the given level probabilities; the first level is
    /// the reference and every other level gets a 0/1 dummy column.
    Categorical {
        probs: Vec<f64>,
    },
}

impl CovariateSpec {
    /// Number of design columns this covariate occupies.
    pub fn width(&self) -> usize {
        match self {
            Self::StandardNormal => 1,
            Self::Categorical { probs } => probs.len().saturating_sub(1),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Self::Categorical { probs } = self {
            let total: f64 = probs.iter().sum();
            if probs.len() < 2 || probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "categorical covariate needs at least two probabilities summing to 1, got {probs:?}"
                )));
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng, out: &mut Vec<f64>) {
        match self {
            Self::StandardNormal => out.push(StandardNormal.sample(rng)),
            Self::Categorical { probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut level = probs.len() - 1;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        level = k;
                        break;
                    }
                }
                out.extend((1..probs.len()).map(|k| if k == level { 1.0 } else { 0.0 }));
            }
        }
    }
}

/// Big-sample weights within an area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightScheme {
    #[default]
    Equal,
    /// `exp(σ z)` with standard normal `z`.
    LogNormal { sigma: f64 },
}

/// A synthetic design. The design matrix is an intercept column followed by
/// the covariate columns, so `true_params.beta` has `1 + Σ width` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub m: usize,
    pub area_sizes_small: Vec<usize>,
    pub area_sizes_big: Vec<usize>,
    pub true_params: ModelParams,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    #[serde(default)]
    pub weights: WeightScheme,
    #[serde(default)]
    pub seed: u64,
}

impl SimDesign {
    /// Design with standard-normal covariates (one per non-intercept
    /// coefficient) and equal weights.
    pub fn standard(
        area_sizes_small: Vec<usize>,
        area_sizes_big: Vec<usize>,
        true_params: ModelParams,
        seed: u64,
    ) -> Self {
        let covariates = vec![CovariateSpec::StandardNormal; true_params.beta.len().saturating_sub(1)];
        Self {
            m: area_sizes_small.len(),
            area_sizes_small,
            area_sizes_big,
            true_params,
            covariates,
            weights: WeightScheme::Equal,
            seed,
        }
    }

    pub fn p(&self) -> usize {
        1 + self.covariates.iter().map(CovariateSpec::width).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("a design needs at least one area".into()));
        }
        if self.area_sizes_small.len() != self.m || self.area_sizes_big.len() != self.m {
            return Err(Error::Config(format!(
                "expected {} small and big area sizes, got {} and {}",
                self.m,
                self.area_sizes_small.len(),
                self.area_sizes_big.len()
            )));
        }
        for c in &self.covariates {
            c.validate()?;
        }
        if self.true_params.beta.len() != self.p() {
            return Err(Error::Config(format!(
                "true beta has {} entries but the design has {} columns",
                self.true_params.beta.len(),
                self.p()
            )));
        }
        let s2 = self.true_params.sigma2;
        if !(s2 >= 0.0) || !s2.is_finite() {
            return Err(Error::Config(format!("true sigma2 must be nonnegative, got {s2}")));
        }
        if let WeightScheme::LogNormal { sigma } = self.weights {
            if !(sigma >= 0.0) || !sigma.is_finite() {
                return Err(Error::Config(format!(
                    "log-normal weight sigma must be nonnegative, got {sigma}"
                )));
            }
        }
        Ok(())
    }

    fn draw_x(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.p());
        x.push(1.0);
        for c in &self.covariates {
            c.draw(rng, &mut x);
        }
        x
    }
}

/// Per-area sizes drawn uniformly from `lo..=hi`, reproducible in `seed`.
pub fn draw_sizes(m: usize, lo: usize, hi: usize, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, &[role::SIM_SIZES]);
    (0..m).map(|_| rng.random_range(lo..=hi.max(lo))).collect()
}

pub fn area_id(index: usize) -> AreaId {
    format!("A{:03}", index + 1)
}

/// A generated world.
#[derive(Debug, Clone)]
pub struct SimWorld {
    pub small: SmallSample,
    pub big: BigSample,
    /// True weighted proportion of every big-sample area, in big-sample
    /// area order.
    pub truths: Vec<f64>,
    /// Random effect of every design area.
    pub effects: AreaEffects,
}

fn bernoulli(rng: &mut impl Rng, theta: f64) -> bool {
    rng.random::<f64>() < theta
}

/// Generate a world from `design`.
pub fn simulate(design: &SimDesign) -> Result<SimWorld> {
    design.validate()?;
    let ids: Vec<AreaId> = (0..design.m).map(area_id).collect();
    let beta = &design.true_params.beta;
    let effects = AreaEffects::draw(
        ids.clone(),
        design.true_params.sigma2,
        &mut substream(design.seed, &[role::SIM_EFFECTS]),
    );

    let mut small = Vec::new();
    let mut big = Vec::new();
    let mut truths = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let v = effects.values()[i];
        let mut rng = substream(design.seed, &[role::SIM_SMALL, i as u64]);
        for _ in 0..design.area_sizes_small[i] {
            let x = design.draw_x(&mut rng);
            let y = bernoulli(&mut rng, logistic_cdf(crate::model::dot(&x, beta) + v));
            small.push(UnitRecord::new(id.clone(), Some(y), x, None));
        }

        let n_big = design.area_sizes_big[i];
        if n_big == 0 {
            continue;
        }
        let mut rng = substream(design.seed, &[role::SIM_BIG, i as u64]);
        let (mut wy, mut w_total) = (0.0, 0.0);
        for _ in 0..n_big {
            let x = design.draw_x(&mut rng);
            let w = match design.weights {
                WeightScheme::Equal => 1.0,
                WeightScheme::LogNormal { sigma } => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (sigma * z).exp()
                }
            };
            if bernoulli(&mut rng, logistic_cdf(crate::model::dot(&x, beta) + v)) {
                wy += w;
            }
            w_total += w;
            big.push(UnitRecord::new(id.clone(), None, x, Some(w)));
        }
        truths.push(wy / w_total);
    }
    Ok(SimWorld {
        small: SmallSample::new(small)?,
        big: BigSample::new(big)?,
        truths,
        effects,
    })
}

/// Accuracy of area estimates against truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean squared deviation.
    pub asd: f64,
    /// `√asd`.
    pub rasd: f64,
    /// Mean absolute deviation.
    pub aad: f64,
    /// `estimate − truth` per area.
    pub deviations: Vec<f64>,
}

/// Baseline metric over candidate metric; above 1 favors the candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeGain {
    pub asd: f64,
    pub rasd: f64,
    pub aad: f64,
}

impl EvalReport {
    pub fn relative_gain(&self, baseline: &EvalReport) -> RelativeGain {
        RelativeGain {
            asd: baseline.asd / self.asd,
            rasd: baseline.rasd / self.rasd,
            aad: baseline.aad / self.aad,
        }
    }
}

/// ASD, RASD and AAD with the area count as divisor.
pub fn evaluate(estimates: &[f64], truths: &[f64]) -> Result<EvalReport> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            actual: estimates.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let deviations: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| e - t).collect();
    let n = deviations.len() as f64;
    let asd = deviations.iter().map(|d| d * d).sum::<f64>() / n;
    let aad = deviations.iter().map(|d| d.abs()).sum::<f64>() / n;
    Ok(EvalReport {
        asd,
        rasd: asd.sqrt(),
        aad,
        deviations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AreaGrouped;

    #[test]
    fn metrics_by_hand() {
        let r = evaluate(&[53.0, 46.0], &[50.0, 50.0]).unwrap();
        assert_eq!(r.asd, 12.5);
        assert!((r.rasd - 3.5355339059327378).abs() < 1e-15);
        assert_eq!(r.aad, 3.5);
        let zero = evaluate(&[0.2, 0.4], &[0.2, 0.4]).unwrap();
        assert_eq!((zero.asd, zero.rasd, zero.aad), (0.0, 0.0, 0.0));
        assert!(evaluate(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn published_relative_gains() {
        let direct = EvalReport {
            asd: 234.2,
            rasd: 15.3,
            aad: 11.8,
            deviations: vec![],
        };
        let ebp = EvalReport {
            asd: 18.9,
            rasd: 4.3,
            aad: 3.3,
            deviations: vec![],
        };
        let g = ebp.relative_gain(&direct);
        assert!((g.asd - 12.4).abs() < 0.05);
        assert!((g.rasd - 3.6).abs() < 0.05);
        assert!((g.aad - 3.6).abs() < 0.05);
    }

    #[test]
    fn simulate_is_reproducible_and_shaped() {
        let design = SimDesign {
            m: 4,
            area_sizes_small: vec![3, 0, 5, 2],
            area_sizes_big: vec![10, 12, 0, 7],
            true_params: ModelParams::new(vec![-0.5, 1.0, 0.3, -0.2], 0.4),
            covariates: vec![
                CovariateSpec::StandardNormal,
                CovariateSpec::Categorical {
                    probs: vec![0.2, 0.5, 0.3],
                },
            ],
            weights: WeightScheme::LogNormal { sigma: 0.5 },
            seed: 11,
        };
        let a = simulate(&design).unwrap();
        let b = simulate(&design).unwrap();
        assert_eq!(a.small, b.small);
        assert_eq!(a.big, b.big);
        assert_eq!(a.truths, b.truths);
        assert_eq!(a.small.area_ids(), &["A001", "A003", "A004"]);
        assert_eq!(a.big.area_ids(), &["A001", "A002", "A004"]);
        assert_eq!(a.truths.len(), 3);
        for rec in a.small.records() {
            assert_eq!(rec.x.len(), 4);
            assert_eq!(rec.x[0], 1.0);
            assert!(rec.x[2] + rec.x[3] <= 1.0);
        }
    }

    #[test]
    fn invalid_designs_rejected() {
        let mut d = SimDesign::standard(vec![2, 2], vec![5, 5], ModelParams::new(vec![0.0, 1.0], 0.1), 1);
        assert!(d.validate().is_ok());
        d.true_params.beta.push(0.0);
        assert!(matches!(d.validate(), Err(Error::Config(_))));
        let bad = SimDesign::standard(vec![2], vec![5, 5], ModelParams::new(vec![0.0], 0.1), 1);
        assert!(bad.validate().is_err());
    }
}
