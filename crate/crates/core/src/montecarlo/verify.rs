//! The oracle suite: every analytic moment map checked against an
//! independent sampled or number-basis computation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::{blocks, domain, substream, BLOCK};
use super::stats::{independence_test, z, CrossAccumulator, PairAccumulator, ScalarAccumulator};
use super::{
    fock_state, fock_two_mode_squeezer_moments, pair_stats, sample_photocurrents, thin_block,
    FockConfig, PairSampler,
};
use crate::detection::{conjugate_term, difference_noise, optimal_gain, probe_term, snl_noise};
use crate::error::{ensure, Result};
use crate::optics::{apply_loss, quadrant_cut, LossChannel, QuadrantLayout};
use crate::source::{build_coherence_grid, fwm_moments, FwmSourceParams, TwinBeamMoments};

/// Standard errors allowed between a sampled estimate and its oracle.
pub const Z_LIMIT: f64 = 5.0;
/// Relative agreement required of the number-basis oracle.
pub const FOCK_TOLERANCE: f64 = 1e-6;
/// Smallest acceptable p-value of the cell-independence test.
pub const P_VALUE_FLOOR: f64 = 1e-3;
/// Largest deviation of sampled shot noise from the analytic line.
pub const SNL_TOLERANCE_DB: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Samples for single-mode checks.
    pub samples: usize,
    /// Samples for the full-grid quadrant check, which draws every cell.
    pub grid_samples: usize,
    pub seed: u64,
    /// Source used for the bright-beam checks.
    pub gain: f64,
    pub excess_correlated: f64,
    pub excess_uncorrelated: f64,
    /// Photons per sample of the bright beam.
    pub photons: f64,
    pub waist_p: f64,
    pub waist_c: f64,
    pub cell_size: f64,
    pub layout: QuadrantLayout,
    /// Loss applied in the thinning and difference-noise checks.
    pub eta_p: f64,
    pub eta_c: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 10_000_000,
            grid_samples: 200_000,
            seed: 2024,
            gain: 2.0,
            excess_correlated: 0.0,
            excess_uncorrelated: 0.0,
            photons: 1e4,
            waist_p: 360.0,
            waist_c: 360.0,
            cell_size: 40.0,
            layout: QuadrantLayout::sensor_array(),
            eta_p: 0.5,
            eta_c: 0.9,
        }
    }
}

impl VerifyOptions {
    pub fn validate(&self) -> Result<()> {
        ensure(self.samples >= 1000, "samples", || {
            format!("need at least 1000, got {}", self.samples)
        })?;
        ensure(self.grid_samples >= 1000, "grid_samples", || {
            format!("need at least 1000, got {}", self.grid_samples)
        })?;
        ensure(self.photons.is_finite() && self.photons >= 100.0, "photons", || {
            format!("bright-beam checks need >= 100 photons, got {}", self.photons)
        })?;
        LossChannel::new(self.eta_p, self.eta_c).validate()?;
        self.source().validate()
    }

    fn source(&self) -> FwmSourceParams {
        FwmSourceParams::ideal(self.gain, self.photons)
            .with_excess(self.excess_correlated, self.excess_uncorrelated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    /// What `value` measures: "max_z", "max_rel", "p_value" or "max_db".
    pub metric: String,
    pub value: f64,
    pub threshold: f64,
    pub n_samples: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<OracleCheck>,
}

fn upper(name: &str, metric: &str, value: f64, threshold: f64, n: usize, detail: String) -> OracleCheck {
    OracleCheck {
        name: name.into(),
        passed: value.is_finite() && value < threshold,
        metric: metric.into(),
        value,
        threshold,
        n_samples: n,
        detail,
    }
}

/// Accumulates `make(block, len)` over all blocks of `n` samples in block order.
fn reduce_blocks<A, F>(n: usize, make: F, merge: impl Fn(&mut A, &A)) -> A
where
    A: Send,
    F: Fn(u64, usize) -> A + Sync,
{
    let parts: Vec<A> = (0..blocks(n))
        .into_par_iter()
        .map(|b| make(b as u64, BLOCK.min(n - b * BLOCK)))
        .collect();
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("at least one block");
    for p in it {
        merge(&mut acc, &p);
    }
    acc
}

/// Streams Gaussian pairs with moments `m`, thinned by `ch`, into an
/// accumulator of `p - g c` (when `g` is given) or of the pair.
fn sampled_pair(m: &TwinBeamMoments, ch: &LossChannel, n: usize, seed: u64) -> Result<PairAccumulator> {
    let s = PairSampler::new(m)?;
    let expect = apply_loss(m, ch)?;
    Ok(reduce_blocks(
        n,
        |b, len| {
            let (p, c) = draw_thinned(&s, ch, len, seed, b);
            let mut acc = PairAccumulator::new(expect.mean_p, expect.mean_c);
            for (x, y) in p.iter().zip(&c) {
                acc.push(*x, *y);
            }
            acc
        },
        |a, b| a.merge(b),
    ))
}

fn draw_thinned(s: &PairSampler, ch: &LossChannel, len: usize, seed: u64, b: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = substream(seed, domain::CELL, 0, b);
    let (mut p, mut c): (Vec<f64>, Vec<f64>) = (0..len).map(|_| s.draw(&mut rng)).unzip();
    if ch.eta_p < 1.0 {
        thin_block(&mut p, ch.eta_p, &mut substream(seed, domain::THIN, 0, b));
    }
    if ch.eta_c < 1.0 {
        thin_block(&mut c, ch.eta_c, &mut substream(seed, domain::THIN, 1, b));
    }
    (p, c)
}

fn fock_check() -> Result<OracleCheck> {
    let mut worst = 0.0f64;
    for g in [1.05, 1.2, 1.3] {
        for n in [0.5, 1.0, 4.0] {
            let f = fock_two_mode_squeezer_moments(g, n)?;
            let c = fwm_moments(&FwmSourceParams::ideal(g, n))?;
            for (a, b) in [
                (f.mean_p, c.mean_p),
                (f.mean_c, c.mean_c),
                (f.var_p, c.var_p),
                (f.var_c, c.var_c),
                (f.cov, c.cov),
            ] {
                worst = worst.max((a / b - 1.0).abs());
            }
        }
    }
    Ok(upper(
        "fock_vs_closed_form",
        "max_rel",
        worst,
        FOCK_TOLERANCE,
        0,
        "G in {1.05, 1.2, 1.3}, seed photons in {0.5, 1, 4}".into(),
    ))
}

fn single_cell_check(o: &VerifyOptions) -> Result<OracleCheck> {
    let m = fwm_moments(&FwmSourceParams::ideal(2.0, 1.0))?;
    let s = sampled_pair(&m, &LossChannel::LOSSLESS, o.samples, o.seed)?.finish();
    let zs = [
        z(s.p.var, 6.0, s.p.se_var),
        z(s.c.var, 3.0, s.c.se_var),
        z(s.cov, 4.0, s.se_cov),
    ];
    Ok(upper(
        "single_cell_moments",
        "max_z",
        zs.into_iter().fold(0.0, f64::max),
        Z_LIMIT,
        o.samples,
        format!("G=2, N=1: var_p={:.5} var_c={:.5} cov={:.5}", s.p.var, s.c.var, s.cov),
    ))
}

fn thinning_check(o: &VerifyOptions) -> Result<OracleCheck> {
    let m = fwm_moments(&o.source())?;
    let ch = LossChannel::new(o.eta_p, o.eta_c);
    let expect = apply_loss(&m, &ch)?;
    let s = sampled_pair(&m, &ch, o.samples, o.seed.wrapping_add(1))?.finish();
    Ok(upper(
        "thinning_vs_loss_map",
        "max_z",
        s.max_z(&expect),
        Z_LIMIT,
        o.samples,
        format!(
            "eta=({}, {}): var_p/N sampled {:.5} analytic {:.5}",
            o.eta_p,
            o.eta_c,
            s.p.var / o.photons,
            expect.var_p / o.photons
        ),
    ))
}

/// Binomial thinning of exact photon-number samples of a weakly seeded
/// squeezer. Both the counts and the survival draws are discrete, so this
/// exercises the loss map without any Gaussian approximation.
fn binomial_check(o: &VerifyOptions) -> Result<OracleCheck> {
    let (gain, seed_mean) = (1.3, 2.0);
    let state = fock_state(gain, seed_mean, &FockConfig::for_state(gain, seed_mean))?;
    let m = state.moments();
    let ch = LossChannel::new(o.eta_p, o.eta_c);
    let expect = apply_loss(&m, &ch)?;
    let n = o.samples;
    let (np, nc) = state.sample(n, o.seed.wrapping_add(2))?;
    let tp = super::thin_counts(&np, ch.eta_p, o.seed.wrapping_add(2), 0)?;
    let tc = super::thin_counts(&nc, ch.eta_c, o.seed.wrapping_add(2), 1)?;
    let p: Vec<f64> = tp.iter().map(|&x| x as f64).collect();
    let c: Vec<f64> = tc.iter().map(|&x| x as f64).collect();
    let s = pair_stats(&p, &c);
    Ok(upper(
        "binomial_thinning_vs_loss_map",
        "max_z",
        s.max_z(&expect),
        Z_LIMIT,
        n,
        format!("number-basis counts, G={gain}, seed photons {seed_mean}"),
    ))
}

fn difference_check(o: &VerifyOptions) -> Result<OracleCheck> {
    let m = fwm_moments(&o.source())?;
    let ch = LossChannel::new(o.eta_p, o.eta_c);
    let expect = apply_loss(&m, &ch)?;
    let s = PairSampler::new(&m)?;
    let seed = o.seed.wrapping_add(3);
    let gains = [1.0, optimal_gain(&m, &ch)?, 0.0];
    let accs = reduce_blocks(
        o.samples,
        |b, len| {
            let (p, c) = draw_thinned(&s, &ch, len, seed, b);
            gains.map(|g| {
                let mut a = ScalarAccumulator::new(expect.mean_p - g * expect.mean_c);
                for (x, y) in p.iter().zip(&c) {
                    a.push(x - g * y);
                }
                a
            })
        },
        |a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        },
    );
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (g, a) in gains.iter().zip(&accs) {
        let st = a.finish();
        let analytic = difference_noise(&m, &ch, *g)?;
        worst = worst.max(z(st.var, analytic, st.se_var));
        detail.push(format!("g={g:.4}: {:.6} vs {:.6}", st.var / o.photons, analytic / o.photons));
    }
    Ok(upper(
        "difference_noise_vs_sampled",
        "max_z",
        worst,
        Z_LIMIT,
        o.samples,
        detail.join("; "),
    ))
}

fn grid_check(o: &VerifyOptions) -> Result<OracleCheck> {
    let m = fwm_moments(&o.source())?;
    let extent = 4.0 * o.waist_p.max(o.waist_c);
    let grid = build_coherence_grid(o.waist_p, o.waist_c, o.cell_size, extent)?;
    let batch = sample_photocurrents(&grid, &m, &o.layout, o.grid_samples, o.seed.wrapping_add(4))?;
    let mut worst = 0.0f64;
    for q in 0..4 {
        let expect = quadrant_cut(&m, &grid, &o.layout, q)?.moments;
        worst = worst.max(pair_stats(&batch.probe[q], &batch.conj[q]).max_z(&expect));
    }
    Ok(upper(
        "quadrant_sums_vs_cut",
        "max_z",
        worst,
        Z_LIMIT,
        o.grid_samples,
        format!("cell size {} µm, {} cells", o.cell_size, grid.len()),
    ))
}

/// Draws four adjacent cells fully inside quadrant 0 with their own
/// substreams and tests every cross-cell correlation against zero.
fn independence_check(o: &VerifyOptions) -> Result<OracleCheck> {
    let m = fwm_moments(&o.source())?;
    let cells = 4usize;
    let w = 0.05;
    let cell = TwinBeamMoments {
        mean_p: w * m.mean_p,
        mean_c: w * m.mean_c,
        var_p: w * m.var_p,
        var_c: w * m.var_c,
        cov: w * m.cov,
    };
    let s = PairSampler::new(&cell)?;
    let seed = o.seed.wrapping_add(5);
    let n = o.samples / 10;
    let shift: Vec<f64> = (0..cells).flat_map(|_| [cell.mean_p, cell.mean_c]).collect();
    let acc = reduce_blocks(
        n,
        |b, len| {
            let draws: Vec<Vec<(f64, f64)>> = (0..cells)
                .map(|k| {
                    let mut rng = substream(seed, domain::CELL, k as u64, b);
                    (0..len).map(|_| s.draw(&mut rng)).collect()
                })
                .collect();
            let mut a = CrossAccumulator::new(shift.clone());
            let mut v = vec![0.0; 2 * cells];
            for t in 0..len {
                for k in 0..cells {
                    (v[2 * k], v[2 * k + 1]) = draws[k][t];
                }
                a.push(&v);
            }
            a
        },
        |a, b| a.merge(b),
    );
    let mut pairs = Vec::new();
    for i in 0..2 * cells {
        for j in i + 1..2 * cells {
            if i / 2 != j / 2 {
                pairs.push((i, j));
            }
        }
    }
    let t = independence_test(&acc, &pairs);
    Ok(OracleCheck {
        name: "cell_independence_chi2".into(),
        passed: t.p_value > P_VALUE_FLOOR,
        metric: "p_value".into(),
        value: t.p_value,
        threshold: P_VALUE_FLOOR,
        n_samples: n,
        detail: format!("chi2 = {:.2} on {} dof", t.statistic, t.dof),
    })
}

/// Coherent-state shot noise from Poisson counts at several powers. Each
/// sampled variance, and the fitted line through the origin, must agree with
/// the analytic shot noise within the dB tolerance.
pub fn snl_linearity(powers: &[f64], n: usize, seed: u64) -> Result<SnlLinearity> {
    ensure(!powers.is_empty(), "powers", || "must not be empty".into())?;
    let g = 1.0;
    let ch = LossChannel::LOSSLESS;
    let mut points = Vec::with_capacity(powers.len());
    for (k, &total) in powers.iter().enumerate() {
        let half = total / 2.0;
        let p = super::coherent_counts(half, n, seed, 2 * k as u64)?;
        let c = super::coherent_counts(half, n, seed, 2 * k as u64 + 1)?;
        let d: Vec<f64> = p.iter().zip(&c).map(|(a, b)| *a as f64 - g * *b as f64).collect();
        let mut acc = ScalarAccumulator::new(0.0);
        d.iter().for_each(|x| acc.push(*x));
        let st = acc.finish();
        let analytic = snl_noise(half, half, &ch, g)?;
        points.push(SnlPoint {
            power: total,
            sampled: st.var,
            se: st.se_var,
            analytic,
        });
    }
    let slope = points.iter().map(|p| p.power * p.sampled).sum::<f64>()
        / points.iter().map(|p| p.power * p.power).sum::<f64>();
    let slope_db = 10.0 * slope.log10();
    let max_db = points
        .iter()
        .map(|p| (10.0 * (p.sampled / p.analytic).log10()).abs())
        .fold(slope_db.abs(), f64::max);
    Ok(SnlLinearity {
        points,
        slope,
        max_deviation_db: max_db,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnlPoint {
    pub power: f64,
    pub sampled: f64,
    pub se: f64,
    pub analytic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnlLinearity {
    pub points: Vec<SnlPoint>,
    /// Least-squares slope through the origin; the analytic slope is 1.
    pub slope: f64,
    pub max_deviation_db: f64,
}

fn snl_check(o: &VerifyOptions) -> Result<OracleCheck> {
    let n = (o.samples / 10).max(1000);
    let lin = snl_linearity(&[1e2, 1e3, 1e4, 1e5, 1e6], n, o.seed.wrapping_add(6))?;
    Ok(upper(
        "snl_linearity",
        "max_db",
        lin.max_deviation_db,
        SNL_TOLERANCE_DB,
        n,
        format!("slope {:.5}", lin.slope),
    ))
}

/// The uncorrelated-pair noise is the quadrature sum of the two arms.
fn quadrature_check(o: &VerifyOptions) -> Result<OracleCheck> {
    let m = fwm_moments(&o.source())?.decorrelated();
    let ch = LossChannel::new(o.eta_p, o.eta_c);
    let g = 0.8;
    let analytic = difference_noise(&m, &ch, g)?;
    let sum = probe_term(&m, &ch) + g * g * conjugate_term(&m, &ch);
    let rel = (analytic / sum - 1.0).abs();
    Ok(upper(
        "uncorrelated_quadrature_sum",
        "max_rel",
        rel,
        1e-12,
        0,
        format!("g={g}"),
    ))
}

fn determinism_check(o: &VerifyOptions) -> Result<OracleCheck> {
    let m = fwm_moments(&o.source())?;
    let extent = 4.0 * o.waist_p.max(o.waist_c);
    let grid = build_coherence_grid(o.waist_p, o.waist_c, o.cell_size, extent)?;
    let n = 3 * BLOCK + 17;
    let run = |threads: usize| -> Result<Vec<u8>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| crate::Error::Consistency(format!("thread pool: {e}")))?;
        let batch = pool.install(|| sample_photocurrents(&grid, &m, &o.layout, n, o.seed))?;
        Ok(batch
            .probe
            .iter()
            .chain(&batch.conj)
            .flatten()
            .flat_map(|x| x.to_le_bytes())
            .collect())
    };
    let same = run(1)? == run(8)?;
    Ok(OracleCheck {
        name: "determinism_1_vs_8_threads".into(),
        passed: same,
        metric: "identical".into(),
        value: if same { 1.0 } else { 0.0 },
        threshold: 1.0,
        n_samples: n,
        detail: "bitwise comparison of per-quadrant samples".into(),
    })
}

/// Runs every oracle check.
pub fn run_oracle_suite(o: &VerifyOptions) -> Result<OracleReport> {
    o.validate()?;
    let checks = vec![
        fock_check()?,
        single_cell_check(o)?,
        thinning_check(o)?,
        binomial_check(o)?,
        difference_check(o)?,
        grid_check(o)?,
        independence_check(o)?,
        snl_check(o)?,
        quadrature_check(o)?,
        determinism_check(o)?,
    ];
    Ok(OracleReport {
        seed: o.seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let o = VerifyOptions {
            samples: 200_000,
            grid_samples: 20_000,
            cell_size: 60.0,
            ..Default::default()
        };
        let r = run_oracle_suite(&o).unwrap();
        for c in &r.checks {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn rejects_tiny_sample_counts() {
        let o = VerifyOptions {
            samples: 10,
            ..Default::default()
        };
        assert!(run_oracle_suite(&o).is_err());
    }
}
