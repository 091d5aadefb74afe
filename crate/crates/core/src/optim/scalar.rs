//! Bounded scalar maximization.

/// Result of a bounded scalar search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMax {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
    /// The maximizer is an endpoint of the search interval.
    pub at_bound: bool,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1; // (3 - √5) / 2

/// Maximize `f` on `[lo, hi]` with Brent's combination of golden-section
/// search and successive parabolic interpolation.
///
/// `tol` is the absolute part of the x-tolerance; a relative part of
/// `sqrt(ε)·|x|` is always added. The endpoints are evaluated at the end and
/// win if they are at least as good as the interior candidate, so monotone
/// objectives return the exact bound.
pub fn brent_maximize(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> ScalarMax {
    assert!(lo < hi, "empty search interval [{lo}, {hi}]");
    let eps = f64::EPSILON.sqrt();
    let mut g = |x: f64| -f(x);
    let (mut a, mut b) = (lo, hi);
    let mut v = a + GOLDEN * (b - a);
    let mut w = v;
    let mut x = v;
    let mut fx = g(x);
    let (mut fv, mut fw) = (fx, fx);
    let mut d = 0.0_f64;
    let mut e = 0.0_f64;
    let mut evaluations = 1;

    for _ in 0..500 {
        let xm = 0.5 * (a + b);
        let tol1 = eps * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            // Parabola through (v, fv), (w, fw), (x, fx).
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let r_old = e;
            e = d;
            if p.abs() < (0.5 * q * r_old).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < xm { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < xm { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = g(u);
        evaluations += 1;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }

    let mut best = ScalarMax {
        x,
        value: -fx,
        evaluations,
        at_bound: false,
    };
    for end in [lo, hi] {
        let fe = -g(end);
        best.evaluations += 1;
        if fe >= best.value {
            best.x = end;
            best.value = fe;
            best.at_bound = true;
        }
    }
    best
}

/// Refine an interior maximizer with Newton steps on the analytic
/// derivatives. Steps that leave `[lo, hi]`, meet non-negative curvature or
/// produce non-finite values stop the refinement and keep the last good
/// point.
pub fn newton_polish(
    mut grad: impl FnMut(f64) -> f64,
    mut hess: impl FnMut(f64) -> f64,
    mut x: f64,
    lo: f64,
    hi: f64,
    max_steps: usize,
) -> f64 {
    for _ in 0..max_steps {
        let h = hess(x);
        let g = grad(x);
        if !(h < 0.0) || !g.is_finite() {
            break;
        }
        let next = x - g / h;
        if !next.is_finite() || next <= lo || next >= hi {
            break;
        }
        let step = (next - x).abs();
        x = next;
        if step <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            break;
        }
    }
    x
}
