//! EOT resonance of each sensor and transduction of a local refractive-index
//! modulation into a modulation of the transmitted probe intensity.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

fn default_dlambda_dn() -> f64 {
    300.0
}

/// Lorentzian transmission resonance (all wavelengths in nm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EOTResonance {
    pub lambda0: f64,
    /// Full width at half maximum.
    pub linewidth: f64,
    pub t_max: f64,
    /// Resonance shift per refractive-index unit (nm/RIU).
    #[serde(default = "default_dlambda_dn")]
    pub dlambda_dn: f64,
}

impl EOTResonance {
    pub fn new(lambda0: f64, linewidth: f64, t_max: f64) -> Self {
        Self {
            lambda0,
            linewidth,
            t_max,
            dlambda_dn: default_dlambda_dn(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.lambda0.is_finite(), "lambda0", || "must be finite".into())?;
        ensure(self.linewidth.is_finite() && self.linewidth > 0.0, "linewidth", || {
            format!("must be > 0, got {}", self.linewidth)
        })?;
        ensure((0.0..=1.0).contains(&self.t_max), "t_max", || {
            format!("must be in [0, 1], got {}", self.t_max)
        })?;
        ensure(self.dlambda_dn.is_finite(), "dlambda_dn", || "must be finite".into())
    }

    fn half_width(&self) -> f64 {
        0.5 * self.linewidth
    }

    /// Detunings of maximal slope, `±Γ/(2√3)` from the peak.
    pub fn inflection_points(&self) -> (f64, f64) {
        let d = self.half_width() / 3f64.sqrt();
        (self.lambda0 - d, self.lambda0 + d)
    }
}

/// Sinusoidal index modulation driven by a transducer voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexModulation {
    pub frequency_hz: f64,
    pub drive_voltage_mv: f64,
    /// Index swing per mV at each sensor (RIU/mV).
    pub volts_to_index: [f64; 4],
}

impl IndexModulation {
    pub fn validate(&self) -> Result<()> {
        ensure(self.frequency_hz.is_finite() && self.frequency_hz > 0.0, "frequency_hz", || {
            format!("must be > 0, got {}", self.frequency_hz)
        })?;
        ensure(self.drive_voltage_mv.is_finite(), "drive_voltage_mv", || {
            "must be finite".into()
        })?;
        for (q, k) in self.volts_to_index.iter().enumerate() {
            ensure(k.is_finite() && *k >= 0.0, &format!("volts_to_index[{q}]"), || {
                format!("must be >= 0, got {k}")
            })?;
        }
        Ok(())
    }
}

pub fn transmission_at(r: &EOTResonance, lambda: f64) -> f64 {
    let h2 = r.half_width() * r.half_width();
    let d = lambda - r.lambda0;
    r.t_max * h2 / (d * d + h2)
}

/// `dT/dn` at fixed probe wavelength: the resonance moves by `dlambda_dn`
/// per RIU, so `dT/dn = -dT/dλ · dλ0/dn`.
pub fn transduction_slope(r: &EOTResonance, lambda: f64) -> f64 {
    let h2 = r.half_width() * r.half_width();
    let d = lambda - r.lambda0;
    let den = d * d + h2;
    let dt_dlambda = -2.0 * r.t_max * h2 * d / (den * den);
    -dt_dlambda * r.dlambda_dn
}

/// Mean-square intensity modulation `A^2/2` for the transmitted mean
/// intensity `intensity` of sensor `q`, where `A = I |dT/dn| κ_q V / T`.
pub fn modulation_signal(
    r: &EOTResonance,
    m: &IndexModulation,
    q: usize,
    intensity: f64,
    lambda: f64,
) -> Result<f64> {
    r.validate()?;
    m.validate()?;
    ensure(q < 4, "sensor", || format!("{q} is not in 0..4"))?;
    ensure(intensity.is_finite() && intensity >= 0.0, "intensity", || {
        format!("must be >= 0, got {intensity}")
    })?;
    let t = transmission_at(r, lambda);
    if t <= 0.0 {
        return Err(Error::Division(format!(
            "sensor {q} transmits nothing at {lambda} nm"
        )));
    }
    let a = intensity * transduction_slope(r, lambda).abs() * m.volts_to_index[q] * m.drive_voltage_mv / t;
    Ok(0.5 * a * a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn res() -> EOTResonance {
        EOTResonance::new(780.0, 60.0, 0.65)
    }

    fn drive(v: f64) -> IndexModulation {
        IndexModulation {
            frequency_hz: 400e3,
            drive_voltage_mv: v,
            volts_to_index: [1e-6, 2e-6, 3e-6, 4e-6],
        }
    }

    #[test]
    fn peak_and_half_width() {
        let r = res();
        assert_eq!(transmission_at(&r, 780.0), 0.65);
        assert_relative_eq!(transmission_at(&r, 810.0), 0.325, max_relative = 1e-15);
        assert_relative_eq!(transmission_at(&r, 750.0), 0.325, max_relative = 1e-15);
    }

    #[test]
    fn slope_shape() {
        let r = res();
        assert_eq!(transduction_slope(&r, 780.0), 0.0);
        for d in [1.0, 7.5, 30.0, 200.0] {
            assert_relative_eq!(
                transduction_slope(&r, 780.0 + d),
                -transduction_slope(&r, 780.0 - d),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let base = EOTResonance::new(781.3, 57.0, 0.62);
        let h = 1e-8;
        for lambda in [760.0, 779.0, 795.0, 830.0] {
            let shifted = |dn: f64| {
                let r = EOTResonance {
                    lambda0: base.lambda0 + base.dlambda_dn * dn,
                    ..base
                };
                transmission_at(&r, lambda)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let an = transduction_slope(&base, lambda);
            assert!((fd / an - 1.0).abs() < 1e-6, "{lambda}: {fd} vs {an}");
        }
    }

    #[test]
    fn signal_is_quadratic_in_drive() {
        let r = res();
        assert_eq!(modulation_signal(&r, &drive(0.0), 0, 1.0, 795.0).unwrap(), 0.0);
        assert_eq!(modulation_signal(&r, &drive(50.0), 0, 1.0, 780.0).unwrap(), 0.0);
        let s60 = modulation_signal(&r, &drive(60.0), 2, 1.0, 795.0).unwrap();
        let s120 = modulation_signal(&r, &drive(120.0), 2, 1.0, 795.0).unwrap();
        assert_relative_eq!(s120, 4.0 * s60, max_relative = 1e-14);
        assert_relative_eq!(10.0 * (s120 / s60).log10(), 20.0 * 2f64.log10(), epsilon = 1e-12);
        let s = (0..4)
            .map(|q| modulation_signal(&r, &drive(100.0), q, 1.0, 795.0).unwrap())
            .collect::<Vec<_>>();
        assert!(s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn opaque_sensor_is_unusable() {
        let r = EOTResonance::new(780.0, 60.0, 0.0);
        assert!(matches!(
            modulation_signal(&r, &drive(1.0), 0, 1.0, 795.0),
            Err(Error::Division(_))
        ));
    }

    #[test]
    fn transmitted_signal_peaks_at_inflection() {
        // fixed incident power: transmitted intensity scales with T
        let r = res();
        let incident = 1.0;
        let scan = |lambda: f64| {
            let t = transmission_at(&r, lambda);
            modulation_signal(&r, &drive(100.0), 0, incident * t, lambda).unwrap()
        };
        let (mut best, mut at) = (0.0, 0.0);
        for k in 0..=12_000 {
            let lambda = 720.0 + k as f64 * 0.01;
            let s = scan(lambda);
            if s > best {
                best = s;
                at = lambda;
            }
        }
        let (lo, hi) = r.inflection_points();
        assert!((at - lo).abs() < 0.011 || (at - hi).abs() < 0.011, "{at}");
    }

    proptest! {
        #[test]
        fn exact_quadratic(v in 0.0..1000.0f64, k in 0.0..10.0f64, lambda in 700.0..900.0f64) {
            let r = res();
            let s1 = modulation_signal(&r, &drive(v), 1, 2.0, lambda).unwrap();
            let sk = modulation_signal(&r, &drive(k * v), 1, 2.0, lambda).unwrap();
            prop_assert!((sk - k * k * s1).abs() <= 1e-12 * sk.abs().max(1e-300));
        }
    }
}
