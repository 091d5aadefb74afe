//! Gauss–Hermite quadrature.
//!
//! Nodes and weights integrate against `exp(-t²)` on the real line. They are
//! computed with Newton iterations on the orthonormal Hermite recurrence,
//! using the usual asymptotic starting guesses for the largest roots.

use crate::error::{Error, Result};

/// Lowest order accepted wherever a quadrature order is user-configurable.
pub const MIN_ORDER: usize = 5;

const PI_M4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}

/// A Gauss–Hermite rule of fixed order.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    weight_sum: f64,
}

impl GaussHermite {
    /// Build a rule with `order` nodes. Orders below [`MIN_ORDER`] are rejected.
    pub fn new(order: usize) -> Result<Self> {
        if order < MIN_ORDER {
            return Err(Error::Config(format!(
                "quadrature order must be at least {MIN_ORDER}, got {order}"
            )));
        }
        if order > 300 {
            return Err(Error::Config(format!("quadrature order {order} is too large")));
        }
        let n = order;
        let nf = n as f64;
        let half = n.div_ceil(2);
        let mut nodes = vec![0.0; n];
        let mut log_weights = vec![0.0; n];
        let mut z = 0.0_f64;
        for i in 0..half {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut deriv = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (PI_M4, 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                deriv = (2.0 * nf).sqrt() * p2;
                let step = p1 / deriv;
                z -= step;
                if step.abs() <= 3e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            // Ascending order: roots are found from the largest downwards.
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            let lw = std::f64::consts::LN_2 - 2.0 * deriv.abs().ln();
            log_weights[i] = lw;
            log_weights[n - 1 - i] = lw;
        }
        if n % 2 == 1 {
            nodes[half - 1] = 0.0;
        }
        nodes.reverse();
        log_weights.reverse();
        let weights: Vec<f64> = log_weights.iter().map(|lw| lw.exp()).collect();
        let weight_sum = weights.iter().sum();
        Ok(Self {
            nodes,
            weights,
            log_weights,
            weight_sum,
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `E[f(X)]` for `X ~ N(mean, sd²)`. Normalizing by the computed weight
    /// sum (≈ √π) makes the rule exact for constants.
    pub fn expect_normal(&self, mean: f64, sd: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sd;
        let total: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mean + scale * t))
            .sum();
        total / self.weight_sum
    }
}
