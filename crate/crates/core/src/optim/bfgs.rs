//! Dense BFGS on the inverse Hessian with a backtracking Armijo search.

use super::{dot, norm_inf, Minimum};

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub gtol: f64,
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            gtol: 1e-9,
            ftol: 1e-14,
        }
    }
}

pub fn minimize<F>(mut fg: F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let identity = |h: &mut Vec<f64>| {
        h.iter_mut().for_each(|v| *v = 0.0);
        (0..n).for_each(|i| h[i * n + i] = 1.0);
    };
    let mut h = vec![0.0; n * n];
    identity(&mut h);
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut converged = false;
    let mut first = true;

    while iterations < opts.max_iter && f.is_finite() {
        if norm_inf(&g) <= opts.gtol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>())
            .collect();
        if dot(&d, &g) >= 0.0 {
            identity(&mut h);
            d = g.iter().map(|v| -v).collect();
            first = true;
        }
        let mut alpha = if first {
            (1.0 / norm_inf(&d).max(1e-300)).min(1.0)
        } else {
            1.0
        };
        let slope = dot(&d, &g);
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let mut gt = vec![0.0; n];
            let ft = fg(&trial, &mut gt);
            evaluations += 1;
            if ft.is_finite() && ft <= f + 1e-4 * alpha * slope {
                accepted = Some((trial, gt, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, g_new, f_new)) = accepted else {
            converged = norm_inf(&g) <= opts.gtol.sqrt();
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if first {
                // Scale the initial inverse Hessian before the first update.
                let gamma = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= gamma);
                first = false;
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let reduction = f - f_new;
        let scale = f.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        g = g_new;
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
