//! Nelder–Mead simplex search with dimension-adaptive coefficients.

use super::Minimum;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evaluations: usize,
    /// Stop when the spread of simplex values falls below this.
    pub ftol: f64,
    /// Stop when every vertex lies within this distance of the best vertex.
    pub xtol: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 20_000,
            ftol: 1e-13,
            xtol: 1e-9,
            initial_step: 0.1,
        }
    }
}

pub fn minimize<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma) = (1.0, 1.0 + 2.0 / nf);
    let (rho, sigma) = (0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);

    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.initial_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evaluations = n + 1;
    let mut iterations = 0;
    let mut converged = false;

    let value_key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };

    while evaluations < opts.max_evaluations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| value_key(values[a]).total_cmp(&value_key(values[b])));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[n] - values[0]).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);
        if spread <= opts.ftol * values[0].abs().max(1.0) && size <= opts.xtol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / nf)
            .collect();
        let towards = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = towards(alpha);
        let fr = f(&xr);
        evaluations += 1;
        if value_key(fr) < value_key(values[0]) {
            let xe = towards(alpha * gamma);
            let fe = f(&xe);
            evaluations += 1;
            if value_key(fe) < value_key(fr) {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if value_key(fr) < value_key(values[n - 1]) {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if value_key(fr) < value_key(values[n]) {
            let xc = towards(alpha * rho);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = towards(-rho);
            let fc = f(&xc);
            (xc, fc)
        };
        evaluations += 1;
        if value_key(fc) < value_key(values[n]).min(value_key(fr)) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // Shrink towards the best vertex.
        for i in 1..=n {
            let shrunk: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(b, v)| b + sigma * (v - b))
                .collect();
            values[i] = f(&shrunk);
            simplex[i] = shrunk;
        }
        evaluations += n;
    }

    let best = (0..=n)
        .min_by(|&a, &b| value_key(values[a]).total_cmp(&value_key(values[b])))
        .unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        evaluations,
        converged,
    }
}
