//! Box-constrained Levenberg-Marquardt for small dense least-squares problems.
//! Steps are projected onto the bounds; the Jacobian is a central difference.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub ftol: f64,
    /// Stop when the step is this small relative to the parameters.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            ftol: 1e-15,
            xtol: 1e-13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmSolution {
    pub x: Vec<f64>,
    /// Half the sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
}

fn cost(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn jacobian<F: Fn(&[f64]) -> Vec<f64>>(
    f: &F,
    x: &[f64],
    m: usize,
    lower: &[f64],
    upper: &[f64],
) -> DMatrix<f64> {
    let n = x.len();
    let mut j = DMatrix::zeros(m, n);
    for k in 0..n {
        let h = 1e-7 * x[k].abs().max(1e-3);
        let up = (x[k] + h).min(upper[k]);
        let dn = (x[k] - h).max(lower[k]);
        let mut xp = x.to_vec();
        xp[k] = up;
        let mut xm = x.to_vec();
        xm[k] = dn;
        let (rp, rm) = (f(&xp), f(&xm));
        let span = up - dn;
        if span <= 0.0 {
            continue;
        }
        for i in 0..m {
            j[(i, k)] = (rp[i] - rm[i]) / span;
        }
    }
    j
}

/// Minimizes `0.5 |f(x)|^2` over the box `[lower, upper]` starting at `x0`.
pub fn minimize<F: Fn(&[f64]) -> Vec<f64>>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LmOptions,
) -> LmSolution {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut r = f(&x);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let j = jacobian(&f, &x, r.len(), lower, upper);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        let mut improved = false;
        let mut small_step = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial, lower, upper);
            let moved = trial
                .iter()
                .zip(&x)
                .map(|(a, b)| ((a - b) / b.abs().max(1e-3)).abs())
                .fold(0.0, f64::max);
            let rt = f(&trial);
            let ct = cost(&rt);
            if ct < c {
                let decrease = (c - ct) / c.max(f64::MIN_POSITIVE);
                x = trial;
                r = rt;
                c = ct;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                small_step = decrease < opts.ftol || moved < opts.xtol;
                break;
            }
            if moved < opts.xtol {
                small_step = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved || small_step || c == 0.0 {
            break;
        }
    }
    LmSolution {
        x,
        cost: c,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]];
        let s = minimize(f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &LmOptions::default());
        assert!((s.x[0] - 1.0).abs() < 1e-8 && (s.x[1] - 1.0).abs() < 1e-8, "{:?}", s.x);
    }

    #[test]
    fn active_bound() {
        // unconstrained optimum at x = 3, box stops at 2
        let f = |x: &[f64]| vec![x[0] - 3.0, 0.1 * (x[1] + 1.0)];
        let s = minimize(f, &[0.0, 0.0], &[0.0, 0.0], &[2.0, 1.0], &LmOptions::default());
        assert!((s.x[0] - 2.0).abs() < 1e-12 && s.x[1].abs() < 1e-12);
    }

    #[test]
    fn exponential_fit() {
        let data: Vec<(f64, f64)> = (0..20).map(|i| {
            let t = i as f64 * 0.2;
            (t, 2.5 * (-1.3 * t).exp())
        }).collect();
        let f = |p: &[f64]| data.iter().map(|(t, y)| p[0] * (-p[1] * t).exp() - y).collect::<Vec<_>>();
        let s = minimize(f, &[1.0, 0.5], &[0.0, 0.0], &[10.0, 10.0], &LmOptions::default());
        assert!((s.x[0] - 2.5).abs() < 1e-9 && (s.x[1] - 1.3).abs() < 1e-9);
    }
}
