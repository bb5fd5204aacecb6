//! Optimized intensity-difference detection: difference noise with an
//! electronic attenuation `g` on the conjugate photocurrent, the optimal `g`,
//! the resulting minimum noise, covariance recovery from balanced
//! measurements and the shot-noise reference.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::optics::{apply_loss, LossChannel};
use crate::source::TwinBeamMoments;
use crate::units::{attenuation_db, to_db};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub quantum_efficiency: f64,
    /// Electronic factor on the conjugate photocurrent amplitude.
    pub gain: f64,
}

impl DetectorConfig {
    pub fn new(quantum_efficiency: f64, gain: f64) -> Self {
        Self {
            quantum_efficiency,
            gain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            (0.0..=1.0).contains(&self.quantum_efficiency),
            "quantum_efficiency",
            || format!("must be in [0, 1], got {}", self.quantum_efficiency),
        )?;
        ensure(self.gain.is_finite() && self.gain >= 0.0, "gain", || {
            format!("must be >= 0, got {}", self.gain)
        })
    }

    /// Attenuation `20 log10(1/g)`.
    pub fn gain_db(&self) -> f64 {
        attenuation_db(self.gain)
    }

    pub fn channel(&self) -> LossChannel {
        LossChannel::symmetric(self.quantum_efficiency)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GainPolicy {
    Optimal,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub diff_variance: f64,
    pub snl: f64,
    pub ratio_linear: f64,
    pub ratio_db: f64,
    /// The `g` used for both the twin-beam and the shot-noise measurement.
    pub gain: f64,
}

impl NoiseReport {
    pub fn gain_db(&self) -> f64 {
        attenuation_db(self.gain)
    }
}

/// Noise of one beam after loss `eta`.
fn beam_term(mean: f64, var: f64, eta: f64) -> f64 {
    eta * eta * (var - mean) + eta * mean
}

fn checked(m: &TwinBeamMoments, ch: &LossChannel) -> Result<()> {
    m.validate()?;
    ch.validate()
}

/// Probe-only contribution to the difference noise.
pub fn probe_term(m: &TwinBeamMoments, ch: &LossChannel) -> f64 {
    beam_term(m.mean_p, m.var_p, ch.eta_p)
}

/// Conjugate contribution before the `g^2` factor.
pub fn conjugate_term(m: &TwinBeamMoments, ch: &LossChannel) -> f64 {
    beam_term(m.mean_c, m.var_c, ch.eta_c)
}

/// Variance of `I_p - g I_c` after losses `ch`.
pub fn difference_noise(m: &TwinBeamMoments, ch: &LossChannel, g: f64) -> Result<f64> {
    checked(m, ch)?;
    ensure(g.is_finite() && g >= 0.0, "gain", || format!("must be >= 0, got {g}"))?;
    let p = probe_term(m, ch);
    let c = conjugate_term(m, ch);
    let v = p + g * g * c - 2.0 * g * ch.eta_p * ch.eta_c * m.cov;
    let scale = p.abs() + g * g * c.abs();
    if v < -1e-12 * scale {
        return Err(Error::Consistency(format!(
            "difference variance {v} < 0; moments violate their invariants"
        )));
    }
    Ok(v.max(0.0))
}

fn conjugate_denominator(m: &TwinBeamMoments, ch: &LossChannel) -> Result<f64> {
    checked(m, ch)?;
    let d = conjugate_term(m, ch);
    if d <= 0.0 {
        return Err(Error::Division(
            "conjugate noise is zero, optimal gain undefined".into(),
        ));
    }
    Ok(d)
}

/// Attenuation minimizing [`difference_noise`].
pub fn optimal_gain(m: &TwinBeamMoments, ch: &LossChannel) -> Result<f64> {
    let d = conjugate_denominator(m, ch)?;
    Ok(ch.eta_p * ch.eta_c * m.cov / d)
}

pub fn min_difference_noise(m: &TwinBeamMoments, ch: &LossChannel) -> Result<f64> {
    let d = conjugate_denominator(m, ch)?;
    let x = ch.eta_p * ch.eta_c * m.cov;
    Ok((probe_term(m, ch) - x * x / d).max(0.0))
}

/// Covariance from individual and balanced difference variances.
pub fn covariance_from_noise(var_p: f64, var_c: f64, var_diff: f64) -> f64 {
    0.5 * (var_p + var_c - var_diff)
}

/// Shot-noise reference for coherent beams of the given pre-loss means,
/// read out with the same `g`.
pub fn snl_noise(mean_p: f64, mean_c: f64, ch: &LossChannel, g: f64) -> Result<f64> {
    ch.validate()?;
    ensure(mean_p >= 0.0 && mean_c >= 0.0, "mean", || {
        format!("means must be >= 0, got ({mean_p}, {mean_c})")
    })?;
    let s = ch.eta_p * mean_p + g * g * ch.eta_c * mean_c;
    if s <= 0.0 {
        return Err(Error::UndefinedSnl(format!(
            "eta_p*mean_p + g^2*eta_c*mean_c = {s}"
        )));
    }
    Ok(s)
}

/// Difference noise relative to the SNL measured with the same `g`.
pub fn squeezing_report(
    m: &TwinBeamMoments,
    ch: &LossChannel,
    policy: GainPolicy,
) -> Result<NoiseReport> {
    let g = match policy {
        GainPolicy::Optimal => optimal_gain(m, ch)?,
        GainPolicy::Fixed(g) => g,
    };
    let diff_variance = match policy {
        GainPolicy::Optimal => min_difference_noise(m, ch)?,
        GainPolicy::Fixed(g) => difference_noise(m, ch, g)?,
    };
    let snl = snl_noise(m.mean_p, m.mean_c, ch, g)?;
    let ratio_linear = diff_variance / snl;
    Ok(NoiseReport {
        diff_variance,
        snl,
        ratio_linear,
        ratio_db: to_db(ratio_linear),
        gain: g,
    })
}

/// Applies detector quantum efficiency, then reports with `policy`.
pub fn detect(m: &TwinBeamMoments, det_qe: f64, policy: GainPolicy) -> Result<NoiseReport> {
    let after = apply_loss(m, &LossChannel::symmetric(det_qe))?;
    squeezing_report(&after, &LossChannel::LOSSLESS, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{fwm_moments, FwmSourceParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn g2() -> TwinBeamMoments {
        fwm_moments(&FwmSourceParams::ideal(2.0, 1.0)).unwrap()
    }

    #[test]
    fn coherent_difference_is_snl() {
        let m = TwinBeamMoments::coherent(3.0, 2.0);
        let v = difference_noise(&m, &LossChannel::LOSSLESS, 1.0).unwrap();
        assert_eq!(v, 5.0);
        let r = squeezing_report(&m, &LossChannel::LOSSLESS, GainPolicy::Fixed(1.0)).unwrap();
        assert_eq!(r.ratio_linear, 1.0);
    }

    #[test]
    fn zero_gain_leaves_probe() {
        let m = g2();
        let ch = LossChannel::new(0.5, 0.9);
        let v = difference_noise(&m, &ch, 0.0).unwrap();
        assert_eq!(v, 0.25 * 4.0 + 0.5 * 2.0);
    }

    #[test]
    fn balanced_g2_is_seed_flux() {
        assert_eq!(difference_noise(&g2(), &LossChannel::LOSSLESS, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn g2_optimum_matches_scan() {
        let m = g2();
        let ch = LossChannel::LOSSLESS;
        let g = optimal_gain(&m, &ch).unwrap();
        assert_relative_eq!(g, 4.0 / 3.0, max_relative = 1e-15);
        let (mut best, mut at) = (f64::INFINITY, 0.0);
        for k in 0..=30_000 {
            let x = k as f64 * 1e-4;
            let v = difference_noise(&m, &ch, x).unwrap();
            if v < best {
                best = v;
                at = x;
            }
        }
        assert!((at - 4.0 / 3.0).abs() <= 1e-4);
        assert_relative_eq!(min_difference_noise(&m, &ch).unwrap(), 2.0 / 3.0, max_relative = 1e-14);
        let r = squeezing_report(&m, &ch, GainPolicy::Optimal).unwrap();
        assert_relative_eq!(r.snl, 2.0 + 16.0 / 9.0, max_relative = 1e-14);
        assert_relative_eq!(r.ratio_linear, (2.0 / 3.0) / (2.0 + 16.0 / 9.0), max_relative = 1e-14);
    }

    #[test]
    fn uncorrelated_optimum_is_zero() {
        let m = g2().decorrelated();
        assert_eq!(optimal_gain(&m, &LossChannel::LOSSLESS).unwrap(), 0.0);
        assert_eq!(
            min_difference_noise(&m, &LossChannel::LOSSLESS).unwrap(),
            probe_term(&m, &LossChannel::LOSSLESS)
        );
    }

    #[test]
    fn covariance_round_trip() {
        assert_eq!(covariance_from_noise(6.0, 3.0, 1.0), 4.0);
        assert_eq!(covariance_from_noise(2.0, 5.0, 7.0), 0.0);
    }

    #[test]
    fn snl_properties() {
        let ch = LossChannel::LOSSLESS;
        assert_eq!(snl_noise(2.0, 3.0, &ch, 1.0).unwrap(), 5.0);
        let ch = LossChannel::new(0.5, 0.9);
        let a = snl_noise(2.0, 3.0, &ch, 0.7).unwrap();
        let b = snl_noise(4.0, 6.0, &ch, 0.7).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-15);
        assert!(matches!(snl_noise(0.0, 0.0, &ch, 1.0), Err(Error::UndefinedSnl(_))));
    }

    #[test]
    fn silent_conjugate_has_no_optimum() {
        let m = TwinBeamMoments::coherent(1.0, 0.0);
        assert!(matches!(optimal_gain(&m, &LossChannel::LOSSLESS), Err(Error::Division(_))));
    }

    fn valid_moments() -> impl Strategy<Value = TwinBeamMoments> {
        (1e-3..1e3f64, 1e-3..1e3f64, 0.0..5.0f64, 0.0..5.0f64, -1.0..1.0f64).prop_map(
            |(mp, mc, xp, xc, rho)| {
                // super-Poissonian beams with bounded correlation
                let var_p = mp * (1.0 + xp);
                let var_c = mc * (1.0 + xc);
                TwinBeamMoments {
                    mean_p: mp,
                    mean_c: mc,
                    var_p,
                    var_c,
                    cov: rho * (var_p * var_c).sqrt() * 0.999,
                }
            },
        )
    }

    proptest! {
        #[test]
        fn vertex_and_convexity(m in valid_moments(), ep in 0.01..1.0f64, ec in 0.01..1.0f64, h in 1e-3..0.5f64) {
            let ch = LossChannel::new(ep, ec);
            let g = optimal_gain(&m, &ch).unwrap().max(0.0);
            let f = |x: f64| {
                probe_term(&m, &ch) + x * x * conjugate_term(&m, &ch) - 2.0 * x * ep * ec * m.cov
            };
            // second difference equals 2 h^2 times the conjugate term
            let second = f(g + h) - 2.0 * f(g) + f(g - h);
            prop_assert!((second - 2.0 * h * h * conjugate_term(&m, &ch)).abs()
                <= 1e-9 * (f(g).abs() + h * h * conjugate_term(&m, &ch) + 1.0));
            prop_assert!(f(g + h) >= f(g) - 1e-12 * f(g).abs().max(1.0));
        }

        #[test]
        fn loss_never_improves_squeezing(m in valid_moments(), a in 0.05..1.0f64, b in 0.05..1.0f64, k in 0.05..1.0f64) {
            let outer = LossChannel::new(a, b);
            if m.cov > 0.0 {
                let r0 = squeezing_report(&m, &outer, GainPolicy::Optimal).unwrap().ratio_linear;
                for inner in [LossChannel::new(a * k, b), LossChannel::new(a, b * k)] {
                    let r1 = squeezing_report(&m, &inner, GainPolicy::Optimal).unwrap().ratio_linear;
                    prop_assert!(r1 >= r0.min(1.0) * (1.0 - 1e-10));
                }
            }
        }
    }
}
