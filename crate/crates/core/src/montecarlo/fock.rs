//! Truncated number-basis two-mode squeezer. The squeezing generator
//! `a†b† - ab` conserves `n_p - n_c`, so a coherent probe seed with vacuum
//! conjugate evolves block by block: block `d` spans `|d+k, k⟩`, k = 0..K.

use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;

use super::rng::{domain, substream, BLOCK};
use crate::error::{ensure, Error, Result};
use crate::source::TwinBeamMoments;

/// Largest tail mass tolerated at either truncation edge.
pub const TAIL_LIMIT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FockConfig {
    /// Highest probe photon number kept in the coherent seed.
    pub max_seed: usize,
    /// Highest conjugate photon number kept per block.
    pub max_pairs: usize,
}

impl FockConfig {
    /// Truncation sized for the requested gain and seed.
    pub fn for_state(gain: f64, seed_mean: f64) -> Self {
        let sd = seed_mean.sqrt();
        let max_seed = (seed_mean + 12.0 * sd + 25.0).ceil() as usize;
        // thermal-like pair distribution with mean ~ (G-1)(1 + seed)
        let pairs = (gain - 1.0) * (1.0 + max_seed as f64);
        let ratio = ((gain - 1.0) / gain).max(1e-3);
        let span = (TAIL_LIMIT.ln() / ratio.ln()).abs();
        let max_pairs = (4.0 * pairs + 2.0 * span + 30.0).ceil() as usize;
        Self { max_seed, max_pairs }
    }
}

/// Joint photon-number distribution of the truncated state.
#[derive(Debug, Clone)]
pub struct FockState {
    /// `prob[d][k] = P(n_p = d + k, n_c = k)`.
    pub prob: Vec<Vec<f64>>,
    /// Probability carried by the highest `k` of every block.
    pub edge_mass: f64,
    /// Seed probability beyond `max_seed`.
    pub seed_tail: f64,
}

fn poisson_weights(mean: f64, max: usize) -> (Vec<f64>, f64) {
    let mut w = Vec::with_capacity(max + 1);
    let mut p = (-mean).exp();
    let mut total = 0.0;
    for n in 0..=max {
        if n > 0 {
            p *= mean / n as f64;
        }
        w.push(p);
        total += p;
    }
    (w, (1.0 - total).max(0.0))
}

/// `exp(r A) e_0` for the antisymmetric tridiagonal generator of block `d`.
fn evolve_block(d: usize, r: f64, size: usize) -> Vec<f64> {
    let off: Vec<f64> = (0..size - 1)
        .map(|k| (((d + k + 1) * (k + 1)) as f64).sqrt())
        .collect();
    let norm = off.iter().fold(0.0f64, |m, v| m.max(*v)) * 2.0;
    let steps = ((r * norm / 0.5).ceil() as usize).max(1);
    let h = r / steps as f64;
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; size];
        for k in 0..size {
            let mut s = 0.0;
            if k > 0 {
                s += off[k - 1] * v[k - 1];
            }
            if k + 1 < size {
                s -= off[k] * v[k + 1];
            }
            out[k] = s;
        }
        out
    };
    let mut v = vec![0.0; size];
    v[0] = 1.0;
    for _ in 0..steps {
        let mut term = v.clone();
        let mut acc = v.clone();
        for j in 1..60 {
            term = apply(&term);
            let scale = h / j as f64;
            let mut largest = 0.0f64;
            for (t, a) in term.iter_mut().zip(acc.iter_mut()) {
                *t *= scale;
                *a += *t;
                largest = largest.max(t.abs());
            }
            if largest < 1e-18 {
                break;
            }
        }
        v = acc;
    }
    v
}

/// Seeded two-mode squeezer with gain `G = cosh^2 r` acting on a coherent
/// probe of mean photon number `seed_mean` and a vacuum conjugate.
pub fn fock_state(gain: f64, seed_mean: f64, cfg: &FockConfig) -> Result<FockState> {
    ensure(gain.is_finite() && gain >= 1.0, "gain", || format!("must be >= 1, got {gain}"))?;
    ensure(seed_mean.is_finite() && seed_mean >= 0.0, "seed_mean", || {
        format!("must be >= 0, got {seed_mean}")
    })?;
    ensure(cfg.max_pairs >= 1, "max_pairs", || "must be >= 1".into())?;
    let r = gain.sqrt().acosh();
    let (seed, seed_tail) = poisson_weights(seed_mean, cfg.max_seed);
    let size = cfg.max_pairs + 1;
    let amps: Vec<Vec<f64>> = (0..=cfg.max_seed)
        .into_par_iter()
        .map(|d| evolve_block(d, r, size))
        .collect();
    let mut edge_mass = 0.0;
    let prob: Vec<Vec<f64>> = amps
        .iter()
        .zip(&seed)
        .map(|(a, w)| {
            let p: Vec<f64> = a.iter().map(|x| w * x * x).collect();
            edge_mass += p[size - 1];
            p
        })
        .collect();
    let state = FockState {
        prob,
        edge_mass,
        seed_tail,
    };
    let tail = state.edge_mass.max(state.seed_tail);
    if tail > TAIL_LIMIT {
        return Err(Error::TailMass {
            tail,
            limit: TAIL_LIMIT,
        });
    }
    Ok(state)
}

impl FockState {
    pub fn total_probability(&self) -> f64 {
        self.prob.iter().flatten().sum()
    }

    /// Photon-number moments by direct summation.
    pub fn moments(&self) -> TwinBeamMoments {
        let norm = self.total_probability();
        let (mut sp, mut sc, mut spp, mut scc, mut spc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (d, row) in self.prob.iter().enumerate() {
            for (k, p) in row.iter().enumerate() {
                let np = (d + k) as f64;
                let nc = k as f64;
                sp += p * np;
                sc += p * nc;
                spp += p * np * np;
                scc += p * nc * nc;
                spc += p * np * nc;
            }
        }
        let (mp, mc) = (sp / norm, sc / norm);
        TwinBeamMoments {
            mean_p: mp,
            mean_c: mc,
            var_p: spp / norm - mp * mp,
            var_c: scc / norm - mc * mc,
            cov: spc / norm - mp * mc,
        }
    }

    /// Draws `n` photon-number pairs. Deterministic in `seed` for any thread count.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
        let mut support = Vec::new();
        let mut weights = Vec::new();
        for (d, row) in self.prob.iter().enumerate() {
            for (k, p) in row.iter().enumerate() {
                if *p > 0.0 {
                    support.push(((d + k) as u64, k as u64));
                    weights.push(*p);
                }
            }
        }
        let table = WeightedAliasIndex::new(weights)
            .map_err(|e| Error::Consistency(format!("Fock distribution: {e}")))?;
        let mut np = vec![0u64; n];
        let mut nc = vec![0u64; n];
        np.par_chunks_mut(BLOCK)
            .zip(nc.par_chunks_mut(BLOCK))
            .enumerate()
            .for_each(|(b, (p, c))| {
                let mut rng = substream(seed, domain::FOCK, 0, b as u64);
                for (x, y) in p.iter_mut().zip(c.iter_mut()) {
                    let (a, bb) = support[table.sample(&mut rng)];
                    *x = a;
                    *y = bb;
                }
            });
        Ok((np, nc))
    }
}

/// Seeded-minus-vacuum moments: the part of the Fock moments driven by the
/// seed, which is what the bright-beam closed form describes.
pub fn fock_two_mode_squeezer_moments(gain: f64, seed_mean: f64) -> Result<TwinBeamMoments> {
    let seeded = fock_state(gain, seed_mean, &FockConfig::for_state(gain, seed_mean))?.moments();
    let vacuum = fock_state(gain, 0.0, &FockConfig::for_state(gain, 0.0))?.moments();
    Ok(TwinBeamMoments {
        mean_p: seeded.mean_p - vacuum.mean_p,
        mean_c: seeded.mean_c - vacuum.mean_c,
        var_p: seeded.var_p - vacuum.var_p,
        var_c: seeded.var_c - vacuum.var_c,
        cov: seeded.cov - vacuum.cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{fwm_moments, FwmSourceParams};

    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a.abs()
        } else {
            (a / b - 1.0).abs()
        }
    }

    #[test]
    fn unit_gain_leaves_vacuum_conjugate() {
        let s = fock_state(1.0, 1.5, &FockConfig::for_state(1.0, 1.5)).unwrap();
        let m = s.moments();
        assert!(m.mean_c.abs() < 1e-15 && m.cov.abs() < 1e-15);
        assert!((m.mean_p - 1.5).abs() < 1e-12 && (m.var_p - 1.5).abs() < 1e-12);
    }

    #[test]
    fn squeezed_vacuum_has_perfect_number_correlation() {
        let s = fock_state(1.2, 0.0, &FockConfig::for_state(1.2, 0.0)).unwrap();
        let m = s.moments();
        assert!((m.mean_p - 0.2).abs() < 1e-12);
        assert!((m.mean_p - m.mean_c).abs() < 1e-14);
        assert!((m.cov - m.var_p).abs() < 1e-12 && (m.var_p - m.var_c).abs() < 1e-12);
        // thermal marginal: var = n (n + 1)
        assert!((m.var_p - 0.2 * 1.2).abs() < 1e-12);
    }

    #[test]
    fn seeded_moments_match_closed_form() {
        for g in [1.05, 1.2, 1.3] {
            for n in [0.5, 1.0, 4.0] {
                let f = fock_two_mode_squeezer_moments(g, n).unwrap();
                let c = fwm_moments(&FwmSourceParams::ideal(g, n)).unwrap();
                for (a, b) in [
                    (f.mean_p, c.mean_p),
                    (f.mean_c, c.mean_c),
                    (f.var_p, c.var_p),
                    (f.var_c, c.var_c),
                    (f.cov, c.cov),
                ] {
                    assert!(rel(a, b) < 1e-6, "G={g} n={n}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn short_truncation_is_rejected() {
        let cfg = FockConfig {
            max_seed: 30,
            max_pairs: 3,
        };
        assert!(matches!(fock_state(1.3, 1.0, &cfg), Err(Error::TailMass { .. })));
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = fock_state(1.3, 1.0, &FockConfig::for_state(1.3, 1.0)).unwrap();
        let a = s.sample(10_000, 11).unwrap();
        let b = s.sample(10_000, 11).unwrap();
        assert_eq!(a, b);
        let mean = a.0.iter().sum::<u64>() as f64 / 1e4;
        assert!((mean - s.moments().mean_p).abs() < 0.1);
    }
}
