//! Scenario files: every physical and numerical input of an experiment run,
//! stored as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{check_voltages, DEFAULT_REGIME_GATE};
use crate::error::{ensure, Error, Result};
use crate::optics::{GaussianBeam, QuadrantLayout};
use crate::plasmonic::{EOTResonance, IndexModulation};
use crate::source::{observed_targets, DetuningMetadata, FwmSourceParams, StageTarget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Master seed for every sampled quantity.
    pub seed: u64,
    pub source: SourceConfig,
    pub stages: StageConfig,
    pub beams: BeamConfig,
    pub layout: LayoutConfig,
    pub coherence: CoherenceConfig,
    /// One resonance per sensor, in window order.
    pub resonances: Vec<EOTResonance>,
    pub modulation: ModulationConfig,
    pub sweep: SweepConfig,
    pub analysis: AnalysisConfig,
    pub fig3: Fig3Config,
    pub verify: VerifyConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub gain: f64,
    /// Seed photons per analysis interval. Intensities are in these units.
    pub seed_flux: f64,
    #[serde(default)]
    pub excess_correlated: f64,
    #[serde(default)]
    pub excess_uncorrelated: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detuning: Option<DetuningMetadata>,
}

impl SourceConfig {
    pub fn params(&self) -> FwmSourceParams {
        FwmSourceParams {
            gain: self.gain,
            seed_flux: self.seed_flux,
            excess_correlated: self.excess_correlated,
            excess_uncorrelated: self.excess_uncorrelated,
            detuning: self.detuning.clone(),
        }
    }
}

/// Losses between the source and the detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    /// Transmission of the optics before the sensors, both beams.
    pub optics_transmission: f64,
    pub quantum_efficiency: f64,
    /// Transmission of the conjugate through the matched mask.
    pub mask_transmission: f64,
    /// Probe transmission of the sensors assumed by the budget chain.
    pub sensor_transmission: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    /// 1/e^2 diameters in µm.
    pub probe_diameter: f64,
    pub conj_diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub window_size: f64,
    pub gap: f64,
    pub tilt_deg: f64,
    /// Window transmissions used for the beam-geometry optimization.
    #[serde(default = "unit4")]
    pub window_transmissions: [f64; 4],
}

fn unit4() -> [f64; 4] {
    [1.0; 4]
}

impl LayoutConfig {
    pub fn quadrants(&self) -> QuadrantLayout {
        QuadrantLayout::new(self.window_size, self.gap, self.tilt_deg)
            .with_transmissions(self.window_transmissions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherenceConfig {
    /// Side of one coherence cell in µm.
    pub cell_size: f64,
    /// Side of the simulated square in µm.
    pub extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationConfig {
    pub wavelength_nm: f64,
    pub frequency_hz: f64,
    /// Index swing per mV of drive at each sensor (RIU/mV).
    pub volts_to_index: [f64; 4],
}

impl ModulationConfig {
    pub fn at(&self, drive_mv: f64) -> IndexModulation {
        IndexModulation {
            frequency_hz: self.frequency_hz,
            drive_voltage_mv: drive_mv,
            volts_to_index: self.volts_to_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Drive voltages in mV, strictly increasing.
    pub voltages: Vec<f64>,
    /// Spectrum records averaged per sampled noise-power estimate.
    pub averages: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSetting {
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub gain_policy: GainSetting,
    /// Twin-beam SNR required where the signal is estimated.
    #[serde(default = "default_gate")]
    pub regime_gate: f64,
    /// Measured residual squeezing per quadrant (dB). When present, each
    /// quadrant's covariance is set so the optimal readout reproduces it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_squeezing_db: Option<[f64; 4]>,
    /// Twin-beam thresholds (mV) the sensor coefficients are calibrated to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_thresholds_mv: Option<[f64; 4]>,
}

fn default_gate() -> f64 {
    DEFAULT_REGIME_GATE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig3Config {
    /// Drive levels shown (mV).
    pub drives_mv: Vec<f64>,
    /// Half span of the frequency axis around the modulation (Hz).
    pub span_hz: f64,
    pub bins: usize,
    /// Resolution bandwidth (Hz).
    pub rbw_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub samples: usize,
    pub grid_samples: usize,
    /// Cell size for the sampled full-grid check (µm).
    pub cell_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub targets: Vec<StageTarget>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            targets: observed_targets(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn probe_beam(&self) -> GaussianBeam {
        GaussianBeam::from_diameter(self.beams.probe_diameter)
    }

    pub fn conj_beam(&self) -> GaussianBeam {
        GaussianBeam::from_diameter(self.beams.conj_diameter)
    }

    pub fn resonance_array(&self) -> [EOTResonance; 4] {
        std::array::from_fn(|q| self.resonances[q])
    }

    /// Checks every field; errors carry the dotted path of the offending key.
    pub fn validate(&self) -> Result<()> {
        self.source.params().validate().map_err(|e| e.within("source"))?;
        let st = &self.stages;
        for (name, v) in [
            ("optics_transmission", st.optics_transmission),
            ("mask_transmission", st.mask_transmission),
            ("sensor_transmission", st.sensor_transmission),
        ] {
            ensure((0.0..=1.0).contains(&v), name, || format!("must be in [0, 1], got {v}"))
                .map_err(|e| e.within("stages"))?;
        }
        ensure(
            st.quantum_efficiency > 0.0 && st.quantum_efficiency <= 1.0,
            "quantum_efficiency",
            || format!("must be in (0, 1], got {}", st.quantum_efficiency),
        )
        .map_err(|e| e.within("stages"))?;
        for (name, d) in [
            ("probe_diameter", self.beams.probe_diameter),
            ("conj_diameter", self.beams.conj_diameter),
        ] {
            ensure(d.is_finite() && d > 0.0, name, || format!("must be > 0, got {d}"))
                .map_err(|e| e.within("beams"))?;
        }
        self.layout.quadrants().validate().map_err(|e| e.within("layout"))?;
        let c = &self.coherence;
        ensure(c.cell_size.is_finite() && c.cell_size > 0.0, "cell_size", || {
            format!("must be > 0, got {}", c.cell_size)
        })
        .map_err(|e| e.within("coherence"))?;
        let widest = self.beams.probe_diameter.max(self.beams.conj_diameter);
        ensure(c.extent >= 4.0 * widest && c.extent >= c.cell_size, "extent", || {
            format!("must cover 4 beam diameters ({} µm) and one cell", 4.0 * widest)
        })
        .map_err(|e| e.within("coherence"))?;
        ensure(self.resonances.len() == 4, "resonances", || {
            format!("need exactly 4 entries, got {}", self.resonances.len())
        })?;
        for (q, r) in self.resonances.iter().enumerate() {
            r.validate().map_err(|e| e.within(&format!("resonances[{q}]")))?;
        }
        let m = &self.modulation;
        ensure(m.wavelength_nm.is_finite() && m.wavelength_nm > 0.0, "wavelength_nm", || {
            format!("must be > 0, got {}", m.wavelength_nm)
        })
        .map_err(|e| e.within("modulation"))?;
        m.at(1.0).validate().map_err(|e| e.within("modulation"))?;
        check_voltages(&self.sweep.voltages).map_err(|e| e.within("sweep"))?;
        ensure(self.sweep.averages >= 1, "averages", || "must be >= 1".into())
            .map_err(|e| e.within("sweep"))?;
        let a = &self.analysis;
        ensure(a.regime_gate.is_finite() && a.regime_gate > 0.0, "regime_gate", || {
            format!("must be > 0, got {}", a.regime_gate)
        })
        .map_err(|e| e.within("analysis"))?;
        if let Some(r) = a.residual_squeezing_db {
            for (q, v) in r.iter().enumerate() {
                ensure(v.is_finite() && *v < 0.0, &format!("residual_squeezing_db[{q}]"), || {
                    format!("must be a negative dB value, got {v}")
                })
                .map_err(|e| e.within("analysis"))?;
            }
        }
        if let Some(t) = a.target_thresholds_mv {
            for (q, v) in t.iter().enumerate() {
                ensure(v.is_finite() && *v > 0.0, &format!("target_thresholds_mv[{q}]"), || {
                    format!("must be > 0, got {v}")
                })
                .map_err(|e| e.within("analysis"))?;
            }
        }
        let f = &self.fig3;
        ensure(!f.drives_mv.is_empty(), "drives_mv", || "must not be empty".into())
            .map_err(|e| e.within("fig3"))?;
        for (k, v) in f.drives_mv.iter().enumerate() {
            ensure(v.is_finite() && *v > 0.0, &format!("drives_mv[{k}]"), || {
                format!("must be > 0, got {v}")
            })
            .map_err(|e| e.within("fig3"))?;
        }
        ensure(f.bins >= 3 && f.bins % 2 == 1, "bins", || {
            format!("must be odd and >= 3, got {}", f.bins)
        })
        .map_err(|e| e.within("fig3"))?;
        ensure(f.span_hz > 0.0 && f.rbw_hz > 0.0, "span_hz", || {
            "span and resolution bandwidth must be > 0".into()
        })
        .map_err(|e| e.within("fig3"))?;
        let v = &self.verify;
        ensure(v.samples >= 1000 && v.grid_samples >= 1000, "samples", || {
            "need at least 1000 samples".into()
        })
        .map_err(|e| e.within("verify"))?;
        ensure(v.cell_size > 0.0, "cell_size", || "must be > 0".into())
            .map_err(|e| e.within("verify"))?;
        ensure(!self.calibration.targets.is_empty(), "targets", || {
            "must not be empty".into()
        })
        .map_err(|e| e.within("calibration"))?;
        ensure(!self.output.dir.is_empty(), "dir", || "must not be empty".into())
            .map_err(|e| e.within("output"))
    }
}

#[cfg(test)]
pub(crate) const SAMPLE_FOR_TESTS: &str = r#"
seed = 7

[source]
gain = 2.14
seed_flux = 1.0

[stages]
optics_transmission = 0.95
quantum_efficiency = 0.95
mask_transmission = 0.9
sensor_transmission = 0.5

[beams]
probe_diameter = 360.0
conj_diameter = 360.0

[layout]
window_size = 200.0
gap = 20.0
tilt_deg = 26.0

[coherence]
cell_size = 2.0
extent = 1440.0

[[resonances]]
lambda0 = 780.0
linewidth = 60.0
t_max = 0.65

[[resonances]]
lambda0 = 782.0
linewidth = 60.0
t_max = 0.64

[[resonances]]
lambda0 = 779.0
linewidth = 60.0
t_max = 0.66

[[resonances]]
lambda0 = 781.0
linewidth = 60.0
t_max = 0.63

[modulation]
wavelength_nm = 795.0
frequency_hz = 400000.0
volts_to_index = [1e-6, 1e-6, 1e-6, 1e-6]

[sweep]
voltages = [0.0, 100.0, 200.0]
averages = 100

[analysis]
gain_policy = "optimal"

[fig3]
drives_mv = [120.0, 60.0]
span_hz = 20000.0
bins = 41
rbw_hz = 1000.0

[verify]
samples = 100000
grid_samples = 10000
cell_size = 60.0

[output]
dir = "out"
"#;

#[cfg(test)]
mod tests {
    use super::*;


    #[test]
    fn parses_and_round_trips() {
        let s = Scenario::from_toml_str(SAMPLE_FOR_TESTS).unwrap();
        assert_eq!(s.analysis.regime_gate, DEFAULT_REGIME_GATE);
        assert_eq!(s.resonances[0].dlambda_dn, 300.0);
        let again = Scenario::from_toml_str(&s.to_toml_string().unwrap()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn errors_name_the_key() {
        let bad = SAMPLE_FOR_TESTS.replace("voltages = [0.0, 100.0, 200.0]", "voltages = []");
        match Scenario::from_toml_str(&bad) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "sweep.voltages"),
            other => panic!("{other:?}"),
        }
        let bad = SAMPLE_FOR_TESTS.replace("gain = 2.14", "gain = 0.5");
        match Scenario::from_toml_str(&bad) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "source.gain"),
            other => panic!("{other:?}"),
        }
        let bad = SAMPLE_FOR_TESTS.replace("t_max = 0.63", "t_max = 1.63");
        match Scenario::from_toml_str(&bad) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "resonances[3].t_max"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = SAMPLE_FOR_TESTS.replace("seed = 7", "seed = 7\nsed = 8");
        assert!(matches!(Scenario::from_toml_str(&bad), Err(Error::Parse(_))));
    }

    #[test]
    fn missing_file_is_io() {
        let e = Scenario::load(Path::new("/nonexistent/scenario.toml")).unwrap_err();
        assert_eq!(e.exit_code(), 4);
    }
}
