//! Limited-memory BFGS with box constraints.
//!
//! A projected active-set variant: variables sitting on a bound with the
//! gradient pushing outward are frozen for the iteration, the two-loop
//! recursion runs on the remaining free subspace, and a backtracking line
//! search follows the projected path `P(x + αd)` with an Armijo condition.

use super::{dot, norm_inf, Minimum};
use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsbOptions {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub pgtol: f64,
    /// Stop when the relative objective reduction falls below this.
    pub ftol: f64,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 1000,
            pgtol: 1e-9,
            ftol: 1e-14,
        }
    }
}

/// Box constraints. Use infinities for unbounded coordinates.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        Self {
            lower: vec![lower; dim],
            upper: vec![upper; dim],
        }
    }

    fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }

    fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| (x[i] - g[i]).clamp(self.lower[i], self.upper[i]) - x[i])
            .collect()
    }

    fn is_active(&self, i: usize, x: f64, g: f64) -> bool {
        (x <= self.lower[i] && g > 0.0) || (x >= self.upper[i] && g < 0.0)
    }
}

/// Minimize `fg` (returning the value and writing the gradient) from `x0`
/// subject to `bounds`.
pub fn minimize<F>(mut fg: F, x0: &[f64], bounds: &Bounds, opts: &LbfgsbOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(bounds.lower.len(), n);
    assert_eq!(bounds.upper.len(), n);
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if !f.is_finite() {
            break;
        }
        if norm_inf(&bounds.projected_gradient(&x, &g)) <= opts.pgtol {
            converged = true;
            break;
        }
        iterations += 1;

        let free: Vec<bool> = (0..n).map(|i| !bounds.is_active(i, x[i], g[i])).collect();
        let mask = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(&free)
                .map(|(&vi, &fr)| if fr { vi } else { 0.0 })
                .collect()
        };

        // Two-loop recursion on the free subspace.
        let mut q = mask(&g);
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(&mask(s), &q);
            for (qi, yi) in q.iter_mut().zip(mask(y)) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let (sm, ym) = (mask(s), mask(y));
            let yy = dot(&ym, &ym);
            let sy = dot(&sm, &ym);
            if yy > 0.0 && sy > 0.0 {
                let gamma = sy / yy;
                q.iter_mut().for_each(|qi| *qi *= gamma);
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(&mask(y), &q);
            for (qi, si) in q.iter_mut().zip(mask(s)) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&d, &g) >= 0.0 {
            history.clear();
            d = mask(&g).iter().map(|v| -v).collect();
        }

        let mut alpha = if history.is_empty() {
            (1.0 / norm_inf(&d).max(1e-300)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            bounds.project(&mut trial);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            let mut gt = vec![0.0; n];
            let ft = fg(&trial, &mut gt);
            evaluations += 1;
            let decrease = dot(&g, &step);
            if ft.is_finite() && ft <= f + 1e-4 * decrease {
                accepted = Some((trial, gt, ft, step));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, g_new, f_new, s)) = accepted else {
            // Line search failed: accept convergence only at a stationary point.
            converged = norm_inf(&bounds.projected_gradient(&x, &g)) <= opts.pgtol.sqrt();
            break;
        };

        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let reduction = f - f_new;
        x = x_new;
        g = g_new;
        let scale = f.abs().max(f_new.abs()).max(1.0);
        f = f_new;
        if reduction <= opts.ftol * scale {
            converged = true;
            break;
        }
    }

    Minimum {
        x,
        value: f,
        iterations,
        evaluations,
        converged,
    }
}
