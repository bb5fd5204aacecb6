//! Seeded two-mode-squeezer source: photon-statistics moments of the bright
//! twin beams, excess-noise extension, calibration against observed stage
//! squeezing, and the coherence-area grid used to partition the beams.

mod calibrate;
mod grid;

pub use calibrate::{
    calibrate_source, measurement_chain, observed_targets, CalibrationOptions, CutStage, ExcessPolicy,
    Readout, SourceCalibration, Stage, StageChain, StageOp, StageReading, StageResidual,
    StageTarget,
};
pub use grid::{build_coherence_grid, Cell, CoherenceGrid};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::units::to_db;

/// Single- and two-photon detunings of the pump. Carried through configs,
/// never read by any computation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetuningMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_photon_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_photon_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwmSourceParams {
    /// Amplification factor G >= 1.
    pub gain: f64,
    /// Mean seed photon number per analysis interval.
    pub seed_flux: f64,
    /// Common-mode excess noise coefficient (correlated between the beams).
    #[serde(default)]
    pub excess_correlated: f64,
    /// Independent per-beam excess noise coefficient.
    #[serde(default)]
    pub excess_uncorrelated: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detuning: Option<DetuningMetadata>,
}

impl FwmSourceParams {
    pub fn ideal(gain: f64, seed_flux: f64) -> Self {
        Self {
            gain,
            seed_flux,
            excess_correlated: 0.0,
            excess_uncorrelated: 0.0,
            detuning: None,
        }
    }

    pub fn with_excess(mut self, correlated: f64, uncorrelated: f64) -> Self {
        self.excess_correlated = correlated;
        self.excess_uncorrelated = uncorrelated;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.gain.is_finite() && self.gain >= 1.0, "gain", || {
            format!("must be >= 1, got {}", self.gain)
        })?;
        ensure(
            self.seed_flux.is_finite() && self.seed_flux > 0.0,
            "seed_flux",
            || format!("must be > 0, got {}", self.seed_flux),
        )?;
        ensure(
            self.excess_correlated.is_finite() && self.excess_correlated >= 0.0,
            "excess_correlated",
            || format!("must be >= 0, got {}", self.excess_correlated),
        )?;
        ensure(
            self.excess_uncorrelated.is_finite() && self.excess_uncorrelated >= 0.0,
            "excess_uncorrelated",
            || format!("must be >= 0, got {}", self.excess_uncorrelated),
        )
    }
}

/// First and second moments of the probe/conjugate intensity pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwinBeamMoments {
    pub mean_p: f64,
    pub mean_c: f64,
    pub var_p: f64,
    pub var_c: f64,
    pub cov: f64,
}

/// Relative slack allowed on the Cauchy-Schwarz bound for rounding.
const CS_SLACK: f64 = 1e-12;

impl TwinBeamMoments {
    /// Two independent coherent beams: Poisson statistics, no covariance.
    pub fn coherent(mean_p: f64, mean_c: f64) -> Self {
        Self {
            mean_p,
            mean_c,
            var_p: mean_p,
            var_c: mean_c,
            cov: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mean_p, self.mean_c, self.var_p, self.var_c, self.cov];
        ensure(all.iter().all(|v| v.is_finite()), "moments", || {
            "all moments must be finite".into()
        })?;
        ensure(self.mean_p >= 0.0, "mean_p", || format!("{} < 0", self.mean_p))?;
        ensure(self.mean_c >= 0.0, "mean_c", || format!("{} < 0", self.mean_c))?;
        ensure(self.var_p >= 0.0, "var_p", || format!("{} < 0", self.var_p))?;
        ensure(self.var_c >= 0.0, "var_c", || format!("{} < 0", self.var_c))?;
        let bound = self.var_p * self.var_c;
        ensure(
            self.cov * self.cov <= bound * (1.0 + CS_SLACK) + f64::MIN_POSITIVE,
            "cov",
            || {
                format!(
                    "Cauchy-Schwarz violated: cov^2 = {} > var_p*var_c = {}",
                    self.cov * self.cov,
                    bound
                )
            },
        )
    }

    /// Balanced (g = 1) intensity-difference variance.
    pub fn balanced_difference_variance(&self) -> f64 {
        self.var_p + self.var_c - 2.0 * self.cov
    }

    /// Same moments with the covariance removed, as seen by non-corresponding
    /// quadrants of the two beams.
    pub fn decorrelated(&self) -> Self {
        Self { cov: 0.0, ..*self }
    }

    pub fn correlation(&self) -> f64 {
        let d = (self.var_p * self.var_c).sqrt();
        if d > 0.0 {
            self.cov / d
        } else {
            0.0
        }
    }
}

/// Moments of the bright seeded two-mode squeezer with intensity-proportional
/// excess noise. Spontaneous (vacuum-seeded) contributions are not included;
/// they are independent of the seed and negligible for bright beams.
pub fn fwm_moments(params: &FwmSourceParams) -> Result<TwinBeamMoments> {
    params.validate()?;
    let g = params.gain;
    let n = params.seed_flux;
    let mean_p = g * n;
    let mean_c = (g - 1.0) * n;
    let excess = params.excess_correlated + params.excess_uncorrelated;
    let m = TwinBeamMoments {
        mean_p,
        mean_c,
        var_p: g * (2.0 * g - 1.0) * n + excess * mean_p * mean_p,
        var_c: (g - 1.0) * (2.0 * g - 1.0) * n + excess * mean_c * mean_c,
        cov: 2.0 * g * (g - 1.0) * n + params.excess_correlated * mean_p * mean_c,
    };
    m.validate()
        .map_err(|e| Error::Consistency(format!("source produced invalid moments: {e}")))?;
    Ok(m)
}

/// Squeezing ratio, linear and in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Squeezing {
    pub linear: f64,
    pub db: f64,
}

impl Squeezing {
    pub fn from_linear(linear: f64) -> Self {
        Self {
            linear,
            db: to_db(linear),
        }
    }
}

/// Lossless balanced squeezing `(var_p + var_c - 2 cov) / (mean_p + mean_c)`.
pub fn source_squeezing(m: &TwinBeamMoments) -> Result<Squeezing> {
    let snl = m.mean_p + m.mean_c;
    if snl <= 0.0 {
        return Err(Error::UndefinedSnl("total mean intensity is zero".into()));
    }
    let diff = m.balanced_difference_variance();
    if diff < -1e-12 * snl {
        return Err(Error::Consistency(format!(
            "negative difference variance {diff}"
        )));
    }
    Ok(Squeezing::from_linear(diff.max(0.0) / snl))
}

/// Gain giving a requested lossless balanced squeezing for the ideal source.
pub fn gain_for_squeezing_db(db: f64) -> Result<f64> {
    ensure(db <= 0.0, "squeezing_db", || {
        format!("ideal source cannot produce {db} dB (> 0)")
    })?;
    let r = 10f64.powf(db / 10.0);
    Ok(0.5 * (1.0 / r + 1.0))
}
