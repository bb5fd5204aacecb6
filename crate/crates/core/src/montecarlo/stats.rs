//! Streaming moment estimators with standard errors, and a chi-squared test
//! for vanishing cross-correlations.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::source::TwinBeamMoments;

/// Power sums of `x - shift`. Shifting by a value near the mean keeps the
/// sums well conditioned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarAccumulator {
    shift: f64,
    n: u64,
    s: [f64; 4],
}

impl ScalarAccumulator {
    pub fn new(shift: f64) -> Self {
        Self {
            shift,
            n: 0,
            s: [0.0; 4],
        }
    }

    pub fn push(&mut self, x: f64) {
        let d = x - self.shift;
        let d2 = d * d;
        self.n += 1;
        self.s[0] += d;
        self.s[1] += d2;
        self.s[2] += d2 * d;
        self.s[3] += d2 * d2;
    }

    /// Adds `other`, which must use the same shift.
    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        for k in 0..4 {
            self.s[k] += other.s[k];
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Mean, variance and their standard errors.
    pub fn finish(&self) -> ScalarStats {
        let n = self.n as f64;
        let e1 = self.s[0] / n;
        let e2 = self.s[1] / n;
        let e3 = self.s[2] / n;
        let e4 = self.s[3] / n;
        let var = e2 - e1 * e1;
        let mu4 = e4 - 4.0 * e1 * e3 + 6.0 * e1 * e1 * e2 - 3.0 * e1.powi(4);
        ScalarStats {
            n: self.n,
            mean: self.shift + e1,
            var: var * n / (n - 1.0),
            se_mean: (var / n).sqrt(),
            se_var: ((mu4 - var * var).max(0.0) / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarStats {
    pub n: u64,
    pub mean: f64,
    pub var: f64,
    pub se_mean: f64,
    pub se_var: f64,
}

/// Joint accumulator for a probe/conjugate pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairAccumulator {
    pub p: ScalarAccumulator,
    pub c: ScalarAccumulator,
    sxy: f64,
    sx2y2: f64,
}

impl PairAccumulator {
    pub fn new(shift_p: f64, shift_c: f64) -> Self {
        Self {
            p: ScalarAccumulator::new(shift_p),
            c: ScalarAccumulator::new(shift_c),
            sxy: 0.0,
            sx2y2: 0.0,
        }
    }

    pub fn push(&mut self, x: f64, y: f64) {
        self.p.push(x);
        self.c.push(y);
        let dx = x - self.p.shift;
        let dy = y - self.c.shift;
        self.sxy += dx * dy;
        self.sx2y2 += dx * dx * dy * dy;
    }

    pub fn merge(&mut self, other: &Self) {
        self.p.merge(&other.p);
        self.c.merge(&other.c);
        self.sxy += other.sxy;
        self.sx2y2 += other.sx2y2;
    }

    pub fn finish(&self) -> PairStats {
        let p = self.p.finish();
        let c = self.c.finish();
        let n = self.p.n as f64;
        let ex = self.p.s[0] / n;
        let ey = self.c.s[0] / n;
        let cov = self.sxy / n - ex * ey;
        // fourth-order cross moment about the shifts; the shift offset is
        // second order in (shift - mean) and only enters the error estimate
        let m22 = self.sx2y2 / n;
        PairStats {
            p,
            c,
            cov: cov * n / (n - 1.0),
            se_cov: ((m22 - cov * cov).max(0.0) / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub p: ScalarStats,
    pub c: ScalarStats,
    pub cov: f64,
    pub se_cov: f64,
}

impl PairStats {
    pub fn moments(&self) -> TwinBeamMoments {
        TwinBeamMoments {
            mean_p: self.p.mean,
            mean_c: self.c.mean,
            var_p: self.p.var,
            var_c: self.c.var,
            cov: self.cov,
        }
    }

    /// Largest |estimate - expected| / standard error over the five moments.
    pub fn max_z(&self, expected: &TwinBeamMoments) -> f64 {
        [
            z(self.p.mean, expected.mean_p, self.p.se_mean),
            z(self.c.mean, expected.mean_c, self.c.se_mean),
            z(self.p.var, expected.var_p, self.p.se_var),
            z(self.c.var, expected.var_c, self.c.se_var),
            z(self.cov, expected.cov, self.se_cov),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// |estimate - expected| in units of `se`; exact agreement with zero error is 0.
pub fn z(estimate: f64, expected: f64, se: f64) -> f64 {
    let d = (estimate - expected).abs();
    if se > 0.0 {
        d / se
    } else if d <= 1e-12 * expected.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Running cross products of `k` variables for an independence test.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAccumulator {
    shift: Vec<f64>,
    n: u64,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl CrossAccumulator {
    pub fn new(shift: Vec<f64>) -> Self {
        let k = shift.len();
        Self {
            shift,
            n: 0,
            s1: vec![0.0; k],
            s2: vec![0.0; k * k],
        }
    }

    pub fn push(&mut self, v: &[f64]) {
        let k = self.shift.len();
        let d: Vec<f64> = v.iter().zip(&self.shift).map(|(a, b)| a - b).collect();
        self.n += 1;
        for i in 0..k {
            self.s1[i] += d[i];
            for j in 0..k {
                self.s2[i * k + j] += d[i] * d[j];
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        for (a, b) in self.s1.iter_mut().zip(&other.s1) {
            *a += b;
        }
        for (a, b) in self.s2.iter_mut().zip(&other.s2) {
            *a += b;
        }
    }

    /// Sample correlation of variables `i` and `j`.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        let k = self.shift.len();
        let n = self.n as f64;
        let cov = |a: usize, b: usize| self.s2[a * k + b] / n - self.s1[a] / n * self.s1[b] / n;
        cov(i, j) / (cov(i, i) * cov(j, j)).sqrt()
    }

    pub fn count(&self) -> u64 {
        self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Under independence `n r^2` is asymptotically chi-squared with one degree
/// of freedom for each tested pair.
pub fn independence_test(acc: &CrossAccumulator, pairs: &[(usize, usize)]) -> ChiSquaredTest {
    let n = acc.count() as f64;
    let statistic: f64 = pairs
        .iter()
        .map(|&(i, j)| {
            let r = acc.correlation(i, j);
            n * r * r
        })
        .sum();
    let dof = pairs.len();
    let p_value = ChiSquared::new(dof as f64)
        .map(|d| 1.0 - d.cdf(statistic))
        .unwrap_or(f64::NAN);
    ChiSquaredTest {
        statistic,
        dof,
        p_value,
    }
}
