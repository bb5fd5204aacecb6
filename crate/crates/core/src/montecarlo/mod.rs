//! Stochastic and small-Hilbert-space oracles for the analytic formulas.
//!
//! Bright-beam intensities are sampled as correlated Gaussians per coherence
//! cell. Loss is applied either by Gaussian-equivalent thinning of continuous
//! samples or by binomial thinning of integer photon counts.

pub mod fock;
pub mod rng;
pub mod stats;
pub mod verify;

pub use fock::{fock_state, fock_two_mode_squeezer_moments, FockConfig, FockState};
pub use stats::{PairAccumulator, PairStats, ScalarAccumulator, ScalarStats};
pub use verify::{run_oracle_suite, snl_linearity, OracleCheck, OracleReport, SnlLinearity, VerifyOptions};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::optics::{gaussian_interval_mass, QuadrantLayout};
use crate::source::{CoherenceGrid, TwinBeamMoments};
use rng::{blocks, domain, substream, BLOCK};

/// Per-quadrant probe and conjugate intensity samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub n_samples: usize,
    pub seed: u64,
    pub probe: [Vec<f64>; 4],
    pub conj: [Vec<f64>; 4],
}

/// Cholesky factor of a 2x2 intensity covariance: `p = mp + a z1`,
/// `c = mc + b z1 + d z2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSampler {
    mean_p: f64,
    mean_c: f64,
    a: f64,
    b: f64,
    d: f64,
}

impl PairSampler {
    pub fn new(m: &TwinBeamMoments) -> Result<Self> {
        for (field, v) in [
            ("mean_p", m.mean_p),
            ("mean_c", m.mean_c),
            ("var_p", m.var_p),
            ("var_c", m.var_c),
            ("cov", m.cov),
        ] {
            ensure(v.is_finite(), field, || format!("must be finite, got {v}"))?;
        }
        ensure(m.var_p >= 0.0, "var_p", || format!("must be >= 0, got {}", m.var_p))?;
        ensure(m.var_c >= 0.0, "var_c", || format!("must be >= 0, got {}", m.var_c))?;
        let det = m.var_p * m.var_c - m.cov * m.cov;
        let scale = (m.var_p * m.var_c).max(f64::MIN_POSITIVE);
        ensure(det >= -1e-12 * scale, "cov", || {
            format!(
                "covariance matrix not positive semidefinite: cov^2 = {} > var_p var_c = {}",
                m.cov * m.cov,
                m.var_p * m.var_c
            )
        })?;
        let a = m.var_p.sqrt();
        let b = if a > 0.0 { m.cov / a } else { 0.0 };
        let d = (m.var_c - b * b).max(0.0).sqrt();
        Ok(Self {
            mean_p: m.mean_p,
            mean_c: m.mean_c,
            a,
            b,
            d,
        })
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        (
            self.mean_p + self.a * z1,
            self.mean_c + self.b * z1 + self.d * z2,
        )
    }
}

/// An independent Gaussian contribution to one quadrant's photocurrents.
#[derive(Debug, Clone, Copy)]
struct Source {
    quadrant: usize,
    stream: u64,
    sampler: PairSampler,
}

/// Cell contributions to every quadrant window. Cells entirely inside a
/// window contribute a correlated pair; the parts of a cell straddling a
/// window edge contribute independent probe and conjugate pieces.
fn quadrant_sources(
    grid: &CoherenceGrid,
    m: &TwinBeamMoments,
    layout: &QuadrantLayout,
) -> Result<Vec<Source>> {
    layout.validate()?;
    // validates the beam-level covariance once; cells share its shape
    PairSampler::new(m)?;
    let (bp, bc) = grid.beams();
    let side = grid.side();
    let tol = 1e-9 * grid.cell_size();
    let mut out = Vec::new();
    for q in 0..4 {
        let rect = layout.window_rect(q);
        let axis = |k: usize, lo: f64, hi: f64, mu: f64, sigma: f64| -> (f64, bool) {
            let (a, b) = grid.interval(k);
            let inside = a >= lo - tol && b <= hi + tol;
            let (a, b) = (a.max(lo), b.min(hi));
            if a >= b {
                (0.0, false)
            } else {
                (gaussian_interval_mass(a, b, mu, sigma), inside)
            }
        };
        for j in 0..side {
            let (pyj, iny) = axis(j, rect.y0, rect.y1, bp.center.1, bp.sigma_y);
            let (cyj, _) = axis(j, rect.y0, rect.y1, bc.center.1, bc.sigma_y);
            if pyj == 0.0 && cyj == 0.0 {
                continue;
            }
            for i in 0..side {
                let (pxi, inx) = axis(i, rect.x0, rect.x1, bp.center.0, bp.sigma_x);
                let (cxi, _) = axis(i, rect.x0, rect.x1, bc.center.0, bc.sigma_x);
                let (wp, wc) = (pxi * pyj, cxi * cyj);
                if wp < 1e-300 && wc < 1e-300 {
                    continue;
                }
                let cell = (j * side + i) as u64;
                let stream = |piece: u64| ((cell * 4 + q as u64) << 2) | piece;
                if inx && iny {
                    out.push(Source {
                        quadrant: q,
                        stream: stream(0),
                        sampler: PairSampler::new(&TwinBeamMoments {
                            mean_p: wp * m.mean_p,
                            mean_c: wc * m.mean_c,
                            var_p: wp * m.var_p,
                            var_c: wc * m.var_c,
                            cov: (wp * wc).sqrt() * m.cov,
                        })?,
                    });
                } else {
                    out.push(Source {
                        quadrant: q,
                        stream: stream(1),
                        sampler: PairSampler::new(&TwinBeamMoments {
                            mean_p: wp * m.mean_p,
                            mean_c: wc * m.mean_c,
                            var_p: wp * m.var_p,
                            var_c: wc * m.var_c,
                            cov: 0.0,
                        })?,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Samples per-quadrant photocurrents for beam-level moments `m` distributed
/// over the cells of `grid`. The result depends only on `(grid, m, layout,
/// n, seed)`, not on the number of worker threads.
pub fn sample_photocurrents(
    grid: &CoherenceGrid,
    m: &TwinBeamMoments,
    layout: &QuadrantLayout,
    n: usize,
    seed: u64,
) -> Result<SampleBatch> {
    let sources = quadrant_sources(grid, m, layout)?;
    let chunks: Vec<[Vec<f64>; 8]> = (0..blocks(n))
        .into_par_iter()
        .map(|b| {
            let len = BLOCK.min(n - b * BLOCK);
            let mut out: [Vec<f64>; 8] = std::array::from_fn(|_| vec![0.0; len]);
            for s in &sources {
                let mut rng = substream(seed, domain::CELL, s.stream, b as u64);
                for k in 0..len {
                    let (x, y) = s.sampler.draw(&mut rng);
                    out[s.quadrant][k] += x;
                    out[4 + s.quadrant][k] += y;
                }
            }
            out
        })
        .collect();
    let mut all: [Vec<f64>; 8] = std::array::from_fn(|_| Vec::with_capacity(n));
    for chunk in chunks {
        for (dst, src) in all.iter_mut().zip(chunk) {
            dst.extend(src);
        }
    }
    let [p0, p1, p2, p3, c0, c1, c2, c3] = all;
    Ok(SampleBatch {
        n_samples: n,
        seed,
        probe: [p0, p1, p2, p3],
        conj: [c0, c1, c2, c3],
    })
}

/// `n` correlated Gaussian pairs with moments `m`, drawn from stream `index`.
pub fn sample_pairs(m: &TwinBeamMoments, n: usize, seed: u64, index: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = PairSampler::new(m)?;
    let mut p = vec![0.0; n];
    let mut c = vec![0.0; n];
    p.par_chunks_mut(BLOCK)
        .zip(c.par_chunks_mut(BLOCK))
        .enumerate()
        .for_each(|(b, (p, c))| {
            let mut rng = substream(seed, domain::CELL, index, b as u64);
            for (x, y) in p.iter_mut().zip(c.iter_mut()) {
                (*x, *y) = s.draw(&mut rng);
            }
        });
    Ok((p, c))
}

fn check_eta(eta: f64) -> Result<()> {
    ensure((0.0..=1.0).contains(&eta), "eta", || format!("must be in [0, 1], got {eta}"))
}

/// Gaussian-equivalent thinning of one block: mean `eta x`, added
/// variance `eta (1 - eta) x`.
pub(crate) fn thin_block(xs: &mut [f64], eta: f64, rng: &mut ChaCha8Rng) {
    let k = eta * (1.0 - eta);
    for x in xs {
        let z: f64 = rng.sample(StandardNormal);
        *x = eta * *x + (k * x.max(0.0)).sqrt() * z;
    }
}

/// Applies a loss `eta` to continuous intensity samples. Stream `index`
/// keeps the thinning noise of different arms independent.
pub fn thinning_loss(samples: &[f64], eta: f64, seed: u64, index: u64) -> Result<Vec<f64>> {
    check_eta(eta)?;
    let mut out = samples.to_vec();
    if eta == 1.0 {
        return Ok(out);
    }
    out.par_chunks_mut(BLOCK).enumerate().for_each(|(b, xs)| {
        let mut rng = substream(seed, domain::THIN, index, b as u64);
        thin_block(xs, eta, &mut rng);
    });
    Ok(out)
}

/// Binomial thinning of integer photon counts: each photon survives with
/// probability `eta`.
pub fn thin_counts(counts: &[u64], eta: f64, seed: u64, index: u64) -> Result<Vec<u64>> {
    check_eta(eta)?;
    let mut out = counts.to_vec();
    out.par_chunks_mut(BLOCK).enumerate().for_each(|(b, xs)| {
        let mut rng = substream(seed, domain::THIN, index, b as u64);
        for x in xs {
            // Binomial::new only fails for p outside [0, 1], checked above
            *x = Binomial::new(*x, eta).map(|d| d.sample(&mut rng)).unwrap_or(0);
        }
    });
    Ok(out)
}

/// Poisson photon counts of a coherent state with mean `mean`.
pub fn coherent_counts(mean: f64, n: usize, seed: u64, index: u64) -> Result<Vec<u64>> {
    ensure(mean.is_finite() && mean > 0.0, "mean", || format!("must be > 0, got {mean}"))?;
    let dist = Poisson::new(mean).map_err(|e| Error::validation("mean", e.to_string()))?;
    let mut out = vec![0u64; n];
    out.par_chunks_mut(BLOCK).enumerate().for_each(|(b, xs)| {
        let mut rng = substream(seed, domain::COHERENT, index, b as u64);
        for x in xs {
            *x = dist.sample(&mut rng) as u64;
        }
    });
    Ok(out)
}

/// Moments and standard errors of a probe/conjugate sample pair.
pub fn pair_stats(p: &[f64], c: &[f64]) -> PairStats {
    let n = p.len().max(1) as f64;
    let mut acc = PairAccumulator::new(p.iter().sum::<f64>() / n, c.iter().sum::<f64>() / n);
    for (x, y) in p.iter().zip(c) {
        acc.push(*x, *y);
    }
    acc.finish()
}

/// Variance of `p - g c` with its standard error.
pub fn difference_stats(p: &[f64], c: &[f64], g: f64) -> ScalarStats {
    let n = p.len().max(1) as f64;
    let shift = p.iter().zip(c).map(|(x, y)| x - g * y).sum::<f64>() / n;
    let mut acc = ScalarAccumulator::new(shift);
    for (x, y) in p.iter().zip(c) {
        acc.push(x - g * y);
    }
    acc.finish()
}
