//! Signal, SNR and threshold analysis of the modulation measurement, and the
//! quantum enhancement over matched and optimal classical probing.
//!
//! Noise powers are variances of the detected photocurrent (photon-number
//! units squared); the signal is the mean-square modulation in the same units.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{difference_noise, optimal_gain, snl_noise};
use crate::error::{ensure, Error, Result};
use crate::montecarlo::rng::{domain, substream};
use crate::optics::LossChannel;
use crate::source::TwinBeamMoments;

/// Default SNR the twin-beam measurement must reach where the signal is
/// estimated for the coherent-state comparison.
pub const DEFAULT_REGIME_GATE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub drive_voltage: f64,
    pub s_on: f64,
    pub s_off: f64,
    pub snr: f64,
    /// The estimated signal was negative and clamped to zero.
    #[serde(default)]
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrCurve {
    pub points: Vec<SnrPoint>,
}

/// `S = s_on - s_off`.
pub fn signal_estimate(s_on: f64, s_off: f64) -> f64 {
    s_on - s_off
}

/// SNR value together with the clamp flag for negative sampled signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snr {
    pub value: f64,
    pub clamped: bool,
}

/// `sqrt(S / s_off)`; a negative `S` is clamped to zero and flagged.
pub fn snr(signal: f64, s_off: f64) -> Result<Snr> {
    ensure(signal.is_finite(), "signal", || format!("must be finite, got {signal}"))?;
    ensure(s_off.is_finite() && s_off >= 0.0, "s_off", || {
        format!("must be >= 0, got {s_off}")
    })?;
    if s_off == 0.0 {
        return Err(Error::Division("noise power without modulation is zero".into()));
    }
    Ok(Snr {
        value: (signal.max(0.0) / s_off).sqrt(),
        clamped: signal < 0.0,
    })
}

/// Coherent-state SNR from a signal estimated with the twin beams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentSnr {
    pub value: f64,
    pub clamped: bool,
    /// The twin-beam SNR at the estimation point reached the regime gate.
    pub regime_ok: bool,
}

/// `sqrt(S / s_off_cs)` with `S` taken from the twin-beam measurement, which
/// is only trustworthy where that measurement's SNR is at least `gate`.
pub fn snr_coherent(signal: f64, s_off_cs: f64, snr_tb_at_estimate: f64, gate: f64) -> Result<CoherentSnr> {
    let s = snr(signal, s_off_cs)?;
    Ok(CoherentSnr {
        value: s.value,
        clamped: s.clamped,
        regime_ok: snr_tb_at_estimate >= gate,
    })
}

/// Single-beam coherent probe without reference: only the probe shot noise.
pub fn optimal_classical_snr(signal: f64, probe_only_noise: f64) -> Result<Snr> {
    snr(signal, probe_only_noise)
}

/// Noise floors and signal scale of one probe/conjugate quadrant pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairNoise {
    pub probe: usize,
    pub conj: usize,
    pub correlated: bool,
    /// Electronic factor on the conjugate photocurrent.
    pub gain: f64,
    pub s_off_tb: f64,
    pub s_off_cs: f64,
    pub s_off_opt: f64,
    /// Signal power per mV² of drive.
    pub signal_per_mv2: f64,
}

impl PairNoise {
    /// Pair `(probe i, conj j)` from detected per-quadrant moments. Matching
    /// quadrants keep their covariance; mismatched ones are independent and
    /// reuse the optimal `g` of the conjugate's own correlated pair.
    pub fn new(quadrants: &[TwinBeamMoments; 4], i: usize, j: usize, signal_per_mv2: f64) -> Result<Self> {
        ensure(i < 4, "probe", || format!("{i} is not in 0..4"))?;
        ensure(j < 4, "conj", || format!("{j} is not in 0..4"))?;
        ensure(signal_per_mv2.is_finite() && signal_per_mv2 >= 0.0, "signal_per_mv2", || {
            format!("must be >= 0, got {signal_per_mv2}")
        })?;
        let ch = LossChannel::LOSSLESS;
        let gain = optimal_gain(&quadrants[j], &ch)?;
        let (p, c) = (&quadrants[i], &quadrants[j]);
        let pair = TwinBeamMoments {
            mean_p: p.mean_p,
            var_p: p.var_p,
            mean_c: c.mean_c,
            var_c: c.var_c,
            cov: if i == j { p.cov } else { 0.0 },
        };
        Ok(Self {
            probe: i,
            conj: j,
            correlated: i == j,
            gain,
            s_off_tb: difference_noise(&pair, &ch, gain)?,
            s_off_cs: snl_noise(pair.mean_p, pair.mean_c, &ch, gain)?,
            s_off_opt: snl_noise(pair.mean_p, pair.mean_c, &ch, 0.0)?,
            signal_per_mv2,
        })
    }

    /// Noise of the pair relative to the shot-noise level in dB.
    pub fn ratio_db(&self) -> f64 {
        10.0 * (self.s_off_tb / self.s_off_cs).log10()
    }

    pub fn label(&self) -> String {
        format!("p{}c{}", self.probe + 1, self.conj + 1)
    }
}

/// Twin-beam, matched coherent and optimal classical curves of one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSweep {
    pub pair: PairNoise,
    pub tb: SnrCurve,
    pub cs: SnrCurve,
    pub opt: SnrCurve,
    /// Whether the twin-beam SNR at the highest drive reached the gate.
    pub regime_ok: bool,
}

pub fn check_voltages(voltages: &[f64]) -> Result<()> {
    ensure(!voltages.is_empty(), "voltages", || "must not be empty".into())?;
    for (k, v) in voltages.iter().enumerate() {
        ensure(v.is_finite() && *v >= 0.0, &format!("voltages[{k}]"), || {
            format!("must be >= 0, got {v}")
        })?;
    }
    ensure(voltages.windows(2).all(|w| w[0] < w[1]), "voltages", || {
        "must be strictly increasing".into()
    })
}

fn point(v: f64, signal: f64, s_off: f64) -> Result<SnrPoint> {
    let s = snr(signal, s_off)?;
    Ok(SnrPoint {
        drive_voltage: v,
        s_on: s_off + signal,
        s_off,
        snr: s.value,
        clamped: s.clamped,
    })
}

/// Analytic sweep: `S(V) = signal_per_mv2 V^2` against each noise floor.
pub fn snr_sweep(pair: &PairNoise, voltages: &[f64], gate: f64) -> Result<PairSweep> {
    check_voltages(voltages)?;
    let mut tb = Vec::with_capacity(voltages.len());
    let mut cs = Vec::with_capacity(voltages.len());
    let mut opt = Vec::with_capacity(voltages.len());
    for &v in voltages {
        let s = pair.signal_per_mv2 * v * v;
        tb.push(point(v, s, pair.s_off_tb)?);
        cs.push(point(v, s, pair.s_off_cs)?);
        opt.push(point(v, s, pair.s_off_opt)?);
    }
    let regime_ok = tb.last().map(|p| p.snr >= gate).unwrap_or(false);
    Ok(PairSweep {
        pair: *pair,
        tb: SnrCurve { points: tb },
        cs: SnrCurve { points: cs },
        opt: SnrCurve { points: opt },
        regime_ok,
    })
}

/// Mean of `k` squared draws of noise with power `s_off` plus, when
/// `signal > 0`, a tone of mean-square `signal` with random phase.
fn noise_power(rng: &mut impl Rng, k: usize, s_off: f64, signal: f64) -> f64 {
    let amp = (2.0 * signal).sqrt();
    let sd = s_off.sqrt();
    let mut acc = 0.0;
    for _ in 0..k {
        let z: f64 = rng.sample(StandardNormal);
        let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let x = amp * phase.cos() + sd * z;
        acc += x * x;
    }
    acc / k as f64
}

/// Sweep with every noise power estimated from `averages` sampled spectrum
/// records, following the measurement protocol: the signal is the
/// twin-beam `s_on - s_off`, reused for the coherent and optimal classical
/// curves. Stream `index` separates pairs.
pub fn sampled_sweep(
    pair: &PairNoise,
    voltages: &[f64],
    gate: f64,
    averages: usize,
    seed: u64,
    index: u64,
) -> Result<PairSweep> {
    check_voltages(voltages)?;
    ensure(averages >= 1, "averages", || "must be >= 1".into())?;
    let rows: Vec<Result<[SnrPoint; 3]>> = voltages
        .par_iter()
        .enumerate()
        .map(|(k, &v)| {
            let mut rng = substream(seed, domain::SWEEP, index, k as u64);
            let s = pair.signal_per_mv2 * v * v;
            let tb_on = noise_power(&mut rng, averages, pair.s_off_tb, s);
            let tb_off = noise_power(&mut rng, averages, pair.s_off_tb, 0.0);
            let cs_off = noise_power(&mut rng, averages, pair.s_off_cs, 0.0);
            let opt_off = noise_power(&mut rng, averages, pair.s_off_opt, 0.0);
            let est = signal_estimate(tb_on, tb_off);
            let mk = |s_off: f64| -> Result<SnrPoint> {
                let r = snr(est, s_off)?;
                Ok(SnrPoint {
                    drive_voltage: v,
                    s_on: s_off + est,
                    s_off,
                    snr: r.value,
                    clamped: r.clamped,
                })
            };
            let mut tb = mk(tb_off)?;
            tb.s_on = tb_on;
            Ok([tb, mk(cs_off)?, mk(opt_off)?])
        })
        .collect();
    let mut tb = Vec::new();
    let mut cs = Vec::new();
    let mut opt = Vec::new();
    for r in rows {
        let [a, b, c] = r?;
        tb.push(a);
        cs.push(b);
        opt.push(c);
    }
    let regime_ok = tb.last().map(|p| p.snr >= gate).unwrap_or(false);
    Ok(PairSweep {
        pair: *pair,
        tb: SnrCurve { points: tb },
        cs: SnrCurve { points: cs },
        opt: SnrCurve { points: opt },
        regime_ok,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Drive voltage at SNR = 1 (mV).
    pub voltage: f64,
    /// The crossing lies outside the swept range.
    pub extrapolated: bool,
}

/// Drive voltage at SNR = 1. An exactly linear curve is inverted at its
/// highest point; otherwise a least-squares line through the origin is
/// inverted.
pub fn threshold_voltage(curve: &SnrCurve) -> Result<Threshold> {
    let pts: Vec<&SnrPoint> = curve.points.iter().filter(|p| p.drive_voltage > 0.0).collect();
    let top = pts
        .last()
        .ok_or_else(|| Error::validation("curve", "needs a point with positive voltage"))?;
    let ratio = top.snr / top.drive_voltage;
    let linear = pts
        .iter()
        .all(|p| (p.snr / p.drive_voltage - ratio).abs() <= 1e-9 * ratio.abs());
    let slope = if linear {
        ratio
    } else {
        pts.iter().map(|p| p.drive_voltage * p.snr).sum::<f64>()
            / pts.iter().map(|p| p.drive_voltage * p.drive_voltage).sum::<f64>()
    };
    if !(slope > 0.0 && slope.is_finite()) {
        return Err(Error::Consistency(format!("SNR does not grow with drive (slope {slope})")));
    }
    let voltage = 1.0 / slope;
    let lo = pts[0].drive_voltage;
    Ok(Threshold {
        voltage,
        extrapolated: voltage < lo || voltage > top.drive_voltage,
    })
}

/// `(v_cs / v_tb - 1) * 100`.
pub fn enhancement(v_cs: f64, v_tb: f64) -> Result<f64> {
    ensure(v_cs.is_finite() && v_cs > 0.0, "v_cs", || format!("must be > 0, got {v_cs}"))?;
    ensure(v_tb.is_finite() && v_tb > 0.0, "v_tb", || format!("must be > 0, got {v_tb}"))?;
    Ok((v_cs / v_tb - 1.0) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementReport {
    pub pair: String,
    pub v_tb: f64,
    pub v_cs: f64,
    pub v_opt: f64,
    pub enhancement_pct: f64,
    pub ratio_db: f64,
    pub gain: f64,
    pub extrapolated: bool,
    pub regime_ok: bool,
}

impl EnhancementReport {
    pub fn from_sweep(s: &PairSweep) -> Result<Self> {
        let tb = threshold_voltage(&s.tb)?;
        let cs = threshold_voltage(&s.cs)?;
        let opt = threshold_voltage(&s.opt)?;
        Ok(Self {
            pair: s.pair.label(),
            v_tb: tb.voltage,
            v_cs: cs.voltage,
            v_opt: opt.voltage,
            enhancement_pct: enhancement(cs.voltage, tb.voltage)?,
            ratio_db: s.pair.ratio_db(),
            gain: s.pair.gain,
            extrapolated: tb.extrapolated || cs.extrapolated || opt.extrapolated,
            regime_ok: s.regime_ok,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{fwm_moments, FwmSourceParams};
    use proptest::prelude::*;

    fn quadrants() -> [TwinBeamMoments; 4] {
        let m = fwm_moments(&FwmSourceParams::ideal(2.0, 1e6).with_excess(0.0, 1e-8)).unwrap();
        std::array::from_fn(|q| {
            let f = 0.2 + 0.01 * q as f64;
            TwinBeamMoments {
                mean_p: f * m.mean_p,
                mean_c: f * m.mean_c,
                var_p: f * m.var_p,
                var_c: f * m.var_c,
                cov: f * m.cov,
            }
        })
    }

    fn line(slope: f64) -> SnrCurve {
        SnrCurve {
            points: [0.0, 50.0, 150.0, 300.0]
                .iter()
                .map(|&v| SnrPoint {
                    drive_voltage: v,
                    s_on: 0.0,
                    s_off: 1.0,
                    snr: slope * v,
                    clamped: false,
                })
                .collect(),
        }
    }

    #[test]
    fn signal_and_snr() {
        assert_eq!(signal_estimate(3.0, 3.0), 0.0);
        assert_eq!(signal_estimate(2.0, 1.0), 1.0);
        assert_eq!(snr(0.0, 2.0).unwrap().value, 0.0);
        assert_eq!(snr(2.0, 2.0).unwrap().value, 1.0);
        let c = snr(-1.0, 2.0).unwrap();
        assert!(c.clamped && c.value == 0.0);
        assert!(matches!(snr(1.0, 0.0), Err(Error::Division(_))));
    }

    #[test]
    fn coherent_snr_scaling() {
        let a = snr_coherent(4.0, 2.0, 10.0, 5.0).unwrap();
        assert_eq!(a.value, snr(4.0, 2.0).unwrap().value);
        let b = snr_coherent(4.0, 4.0, 10.0, 5.0).unwrap();
        assert!((a.value / b.value - 2f64.sqrt()).abs() < 1e-15);
        assert!(!snr_coherent(4.0, 4.0, 3.0, 5.0).unwrap().regime_ok);
    }

    #[test]
    fn threshold_of_exact_line() {
        let t = threshold_voltage(&line(0.01)).unwrap();
        assert!((t.voltage - 100.0).abs() < 1e-12 && !t.extrapolated);
        let far = threshold_voltage(&line(0.001)).unwrap();
        assert!(far.extrapolated);
    }

    #[test]
    fn enhancement_values() {
        assert_eq!(enhancement(5.0, 5.0).unwrap(), 0.0);
        assert!((enhancement(307.0, 252.0).unwrap() - 21.825).abs() < 1e-3);
        assert!((enhancement(394.0, 319.0).unwrap() - 23.511).abs() < 1e-3);
        assert!(enhancement(0.0, 1.0).is_err());
    }

    #[test]
    fn sixteen_pairs_and_ordering() {
        let q = quadrants();
        let v = [0.0, 100.0, 200.0, 400.0];
        let mut correlated = 0;
        for i in 0..4 {
            for j in 0..4 {
                let p = PairNoise::new(&q, i, j, 1e-2).unwrap();
                correlated += p.correlated as usize;
                let s = snr_sweep(&p, &v, DEFAULT_REGIME_GATE).unwrap();
                for c in [&s.tb, &s.cs, &s.opt] {
                    assert_eq!(c.points[0].snr, 0.0);
                }
                if i == j {
                    // correlated beats shot noise; uncorrelated with excess loses to it
                    for k in 1..v.len() {
                        assert!(s.tb.points[k].snr > s.cs.points[k].snr);
                    }
                } else {
                    for k in 1..v.len() {
                        assert!(s.tb.points[k].snr < s.cs.points[k].snr);
                    }
                }
                for k in 1..v.len() {
                    assert!(s.opt.points[k].snr >= s.cs.points[k].snr);
                }
            }
        }
        assert_eq!(correlated, 4);
    }

    #[test]
    fn threshold_law() {
        let q = quadrants();
        let p = PairNoise::new(&q, 2, 2, 3e-3).unwrap();
        let r = EnhancementReport::from_sweep(&snr_sweep(&p, &[0.0, 100.0, 900.0], 5.0).unwrap()).unwrap();
        let law = 10f64.powf(p.ratio_db().abs() / 20.0);
        assert!((r.v_cs / r.v_tb - law).abs() < 1e-12);
    }

    #[test]
    fn sampled_threshold_tracks_analytic() {
        let q = quadrants();
        let p = PairNoise::new(&q, 0, 0, 1.0).unwrap();
        let v_tb = (p.s_off_tb / p.signal_per_mv2).sqrt();
        let volts: Vec<f64> = (0..=10).map(|k| k as f64 * 0.2 * v_tb).collect();
        let s = sampled_sweep(&p, &volts, 5.0, 20_000, 1, 0).unwrap();
        let t = threshold_voltage(&s.tb).unwrap();
        assert!((t.voltage / v_tb - 1.0).abs() < 0.02, "{} vs {v_tb}", t.voltage);
        let again = sampled_sweep(&p, &volts, 5.0, 20_000, 1, 0).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn rejects_bad_voltages() {
        let q = quadrants();
        let p = PairNoise::new(&q, 0, 0, 1.0).unwrap();
        assert!(snr_sweep(&p, &[], 5.0).is_err());
        assert!(snr_sweep(&p, &[1.0, 1.0], 5.0).is_err());
        assert!(snr_sweep(&p, &[-1.0, 1.0], 5.0).is_err());
    }

    proptest! {
        #[test]
        fn snr_is_linear_in_drive(s in 1e-6..1e3f64, noise in 1e-3..1e3f64) {
            let p = PairNoise {
                probe: 0, conj: 0, correlated: true, gain: 1.0,
                s_off_tb: noise, s_off_cs: 2.0 * noise, s_off_opt: noise, signal_per_mv2: s,
            };
            let sw = snr_sweep(&p, &[1.0, 10.0, 100.0, 1000.0], 5.0).unwrap();
            let r0 = sw.tb.points[0].snr / 1.0;
            for pt in &sw.tb.points {
                prop_assert!((pt.snr / pt.drive_voltage / r0 - 1.0).abs() < 1e-12);
            }
        }
    }
}
