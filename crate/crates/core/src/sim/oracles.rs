//! Slow, direct re-computations used to cross-check the production code.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Maximizer of `f` on `[lo, hi]` by nested grid search: each level scans
/// `points` equally spaced values, then zooms to the two cells around the
/// best one.
pub fn grid_argmax(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, points: usize, levels: usize) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut best = (lo, f(lo));
    for _ in 0..levels {
        let step = (b - a) / (points - 1) as f64;
        for k in 0..points {
            let x = a + step * k as f64;
            let fx = f(x);
            if fx > best.1 {
                best = (x, fx);
            }
        }
        a = (best.0 - step).max(lo);
        b = (best.0 + step).min(hi);
    }
    best
}

/// Composite trapezoid rule with `n` intervals.
pub fn trapezoid(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|k| f(lo + h * k as f64)).sum();
    h * (0.5 * (f(lo) + f(hi)) + inner)
}

/// `E[f(X)]`, `X ~ N(mean, sd²)`, by the trapezoid rule over `mean ± 12 sd`.
pub fn normal_expectation_trapezoid(mean: f64, sd: f64, mut f: impl FnMut(f64) -> f64, n: usize) -> f64 {
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    trapezoid(
        |x| {
            let z = (x - mean) / sd;
            f(x) * norm * (-0.5 * z * z).exp()
        },
        mean - 12.0 * sd,
        mean + 12.0 * sd,
        n,
    )
}

fn naive_logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// `log k(v)` written out term by term without any stabilization.
pub fn naive_log_k(v: f64, offsets: &[f64], outcomes: &[bool], sigma2: f64) -> f64 {
    let mut total = -v * v / (2.0 * sigma2);
    for (&eta, &y) in offsets.iter().zip(outcomes) {
        let h = naive_logistic(eta + v);
        total += if y { h.ln() } else { (1.0 - h).ln() };
    }
    total
}

/// Marginal log-likelihood of one area by dense trapezoid integration over
/// `±(12σ + 1)`.
pub fn naive_area_log_marginal(offsets: &[f64], outcomes: &[bool], sigma2: f64, n: usize) -> f64 {
    let sd = sigma2.sqrt();
    let lo = -12.0 * sd - 1.0;
    let hi = 12.0 * sd + 1.0;
    let peak = grid_argmax(|v| naive_log_k(v, offsets, outcomes, sigma2), lo, hi, 2001, 1).1;
    let integral = trapezoid(|v| (naive_log_k(v, offsets, outcomes, sigma2) - peak).exp(), lo, hi, n);
    integral.ln() + peak - 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln()
}

/// Monte-Carlo estimate of `E[H(offset + v)]`, `v ~ N(v_hat, tau2)`, with
/// its standard error.
pub fn mc_best_predict(offset: f64, v_hat: f64, tau2: f64, draws: usize, rng: &mut impl Rng) -> (f64, f64) {
    let sd = tau2.sqrt();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let z: f64 = StandardNormal.sample(rng);
        let h = naive_logistic(offset + v_hat + sd * z);
        sum += h;
        sum_sq += h * h;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum_sq - n * mean * mean) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Central finite difference of `f` at `x` with step `h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
