//! Orchestration of a scenario: source through optics, quadrant cut, sensors
//! and detectors, then the modulation measurement on all sixteen quadrant
//! pairs.

use serde::{Deserialize, Serialize};

use crate::analysis::{sampled_sweep, snr_sweep, EnhancementReport, PairNoise, PairSweep};
use crate::detection::{conjugate_term, probe_term, squeezing_report, GainPolicy};
use crate::error::{Error, Result};
use crate::montecarlo::VerifyOptions;
use crate::optics::{
    apply_loss, optimize_waist, quadrant_cut, LossChannel, QuadrantLayout, QuadratureConfig,
    WaistOptimum, WaistSearch,
};
use crate::plasmonic::{modulation_signal, transduction_slope, transmission_at};
use crate::scenario::Scenario;
use crate::source::{
    build_coherence_grid, calibrate_source, fwm_moments, measurement_chain, CalibrationOptions,
    CoherenceGrid, CutStage, Readout, SourceCalibration, Stage, StageChain, StageOp,
    TwinBeamMoments,
};
use crate::units::{attenuation_db, attenuation_power_db, to_db};

/// State of one sensor quadrant at the detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrantState {
    pub quadrant: usize,
    pub contained_p: f64,
    pub contained_c: f64,
    pub straddle_fraction: f64,
    /// Sensor transmission at the probe wavelength.
    pub sensor_transmission: f64,
    /// Optimal-readout squeezing predicted from the geometry.
    pub model_ratio_db: f64,
    /// Squeezing actually used (equal to the model unless overridden).
    pub ratio_db: f64,
    pub gain: f64,
    pub detected: TwinBeamMoments,
    /// Mean-square modulation per mV² of drive.
    pub signal_per_mv2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub scenario: Scenario,
    pub source: TwinBeamMoments,
    pub after_optics: TwinBeamMoments,
    pub grid: CoherenceGrid,
    pub quadrants: [QuadrantState; 4],
}

/// Covariance that makes the optimal readout of `m` reach `ratio_db`.
///
/// With `P`, `C` the probe and conjugate noise terms, the optimal ratio is
/// `(P - x/C) / (mp + x mc / C^2)` for `x = cov^2`, which is linear in `x`.
pub fn covariance_for_squeezing(m: &TwinBeamMoments, ratio_db: f64) -> Result<f64> {
    let ch = LossChannel::LOSSLESS;
    let p = probe_term(m, &ch);
    let c = conjugate_term(m, &ch);
    let r = 10f64.powf(ratio_db / 10.0);
    let x = (p - r * m.mean_p) / (r * m.mean_c / (c * c) + 1.0 / c);
    if !(x >= 0.0 && x <= p * c * (1.0 + 1e-12)) {
        return Err(Error::Consistency(format!(
            "{ratio_db} dB is not reachable with these marginal moments"
        )));
    }
    Ok(x.sqrt())
}

impl Experiment {
    pub fn new(s: &Scenario) -> Result<Self> {
        s.validate()?;
        let source = fwm_moments(&s.source.params())?;
        let st = &s.stages;
        let after_optics = apply_loss(&source, &LossChannel::symmetric(st.optics_transmission))?;
        let grid = build_coherence_grid(
            s.beams.probe_diameter,
            s.beams.conj_diameter,
            s.coherence.cell_size,
            s.coherence.extent,
        )
        .map_err(|e| e.within("coherence"))?;
        let layout = sensor_layout(s);
        let lambda = s.modulation.wavelength_nm;
        let modulation = s.modulation.at(1.0);
        let mut quadrants = Vec::with_capacity(4);
        for q in 0..4 {
            let cut = quadrant_cut(&after_optics, &grid, &layout, q)?;
            let res = &s.resonances[q];
            let t = transmission_at(res, lambda);
            let sensed = apply_loss(&cut.moments, &LossChannel::new(t, st.mask_transmission))?;
            let mut detected = apply_loss(&sensed, &LossChannel::symmetric(st.quantum_efficiency))?;
            let model = squeezing_report(&detected, &LossChannel::LOSSLESS, GainPolicy::Optimal)?;
            if let Some(targets) = s.analysis.residual_squeezing_db {
                detected.cov = covariance_for_squeezing(&detected, targets[q])
                    .map_err(|e| match e {
                        Error::Consistency(m) => {
                            Error::validation(format!("analysis.residual_squeezing_db[{q}]"), m)
                        }
                        other => other,
                    })?;
            }
            let used = squeezing_report(&detected, &LossChannel::LOSSLESS, GainPolicy::Optimal)?;
            quadrants.push(QuadrantState {
                quadrant: q,
                contained_p: cut.contained_p,
                contained_c: cut.contained_c,
                straddle_fraction: cut.straddle_fraction,
                sensor_transmission: t,
                model_ratio_db: model.ratio_db,
                ratio_db: used.ratio_db,
                gain: used.gain,
                detected,
                signal_per_mv2: modulation_signal(res, &modulation, q, detected.mean_p, lambda)?,
            });
        }
        let quadrants: [QuadrantState; 4] = quadrants
            .try_into()
            .map_err(|_| Error::Consistency("expected four quadrants".into()))?;
        Ok(Self {
            scenario: s.clone(),
            source,
            after_optics,
            grid,
            quadrants,
        })
    }

    pub fn detected(&self) -> [TwinBeamMoments; 4] {
        self.quadrants.map(|q| q.detected)
    }

    pub fn pair(&self, i: usize, j: usize) -> Result<PairNoise> {
        PairNoise::new(&self.detected(), i, j, self.quadrants[i].signal_per_mv2)
    }

    /// All sixteen pairs, probe quadrant outer.
    pub fn pairs(&self) -> Result<Vec<PairNoise>> {
        let mut out = Vec::with_capacity(16);
        for i in 0..4 {
            for j in 0..4 {
                out.push(self.pair(i, j)?);
            }
        }
        Ok(out)
    }

    pub fn sweeps(&self) -> Result<Vec<PairSweep>> {
        let gate = self.scenario.analysis.regime_gate;
        self.pairs()?
            .iter()
            .map(|p| snr_sweep(p, &self.scenario.sweep.voltages, gate))
            .collect()
    }

    pub fn sampled_sweeps(&self, averages: usize, seed: u64) -> Result<Vec<PairSweep>> {
        let gate = self.scenario.analysis.regime_gate;
        self.pairs()?
            .iter()
            .map(|p| {
                let index = (p.probe * 4 + p.conj) as u64;
                sampled_sweep(p, &self.scenario.sweep.voltages, gate, averages, seed, index)
            })
            .collect()
    }

    /// Razor-blade cut of the post-optics beams on this grid.
    pub fn razor_cut_straddle(&self) -> Result<f64> {
        razor_straddle(&self.after_optics, &self.grid)
    }

    /// Stage table along the calibration chain, followed by per-quadrant
    /// sensor readouts from the array geometry.
    pub fn budget(&self) -> Result<Budget> {
        let s = &self.scenario;
        let st = &s.stages;
        let chain = StageChain {
            quantum_efficiency: st.quantum_efficiency,
            seed_flux: s.source.seed_flux,
            stages: vec![
                stage("source", StageOp::Identity, Readout::Balanced),
                stage(
                    "optics",
                    StageOp::Loss {
                        eta_p: st.optics_transmission,
                        eta_c: st.optics_transmission,
                    },
                    Readout::Balanced,
                ),
                stage(
                    "cut",
                    StageOp::Cut(CutStage {
                        contained: 0.25,
                        straddle: Some(self.razor_cut_straddle()?),
                    }),
                    Readout::Balanced,
                ),
                stage(
                    "sensor",
                    StageOp::Loss {
                        eta_p: st.sensor_transmission,
                        eta_c: st.mask_transmission,
                    },
                    Readout::Optimal,
                ),
            ],
        };
        let readings = chain.evaluate(&s.source.params())?;
        let mut rows: Vec<BudgetRow> = chain
            .stages
            .iter()
            .zip(&readings)
            .map(|(stg, r)| BudgetRow {
                stage: stg.label.clone(),
                squeezing_db: r.squeezing_db,
                gain: 10f64.powf(-r.gain_db / 20.0),
                attenuation_db: r.gain_db,
                attenuation_power_db: attenuation_power_db(10f64.powf(-r.gain_db / 20.0)),
            })
            .collect();
        for q in &self.quadrants {
            rows.push(BudgetRow {
                stage: format!("sensor_q{}", q.quadrant + 1),
                squeezing_db: q.model_ratio_db,
                gain: q.gain,
                attenuation_db: attenuation_db(q.gain),
                attenuation_power_db: attenuation_power_db(q.gain),
            });
        }
        Ok(Budget {
            quantum_efficiency: st.quantum_efficiency,
            rows,
        })
    }

    pub fn fig3(&self) -> Result<Fig3> {
        let s = &self.scenario;
        let f = &s.fig3;
        let f0 = s.modulation.frequency_hz;
        let sigma = f.rbw_hz / (2.0 * (2.0 * 2f64.ln()).sqrt());
        let half = (f.bins - 1) / 2;
        let step = f.span_hz / half as f64;
        let mut rows = Vec::with_capacity(4 * f.bins);
        let mut quadrants = Vec::with_capacity(4);
        for q in 0..4 {
            let p = self.pair(q, q)?;
            let signals: Vec<f64> = f.drives_mv.iter().map(|v| p.signal_per_mv2 * v * v).collect();
            for k in 0..f.bins {
                let df = (k as f64 - half as f64) * step;
                let shape = (-(df * df) / (2.0 * sigma * sigma)).exp();
                rows.push(Fig3Row {
                    quadrant: q,
                    frequency_hz: f0 + df,
                    snl_db: 0.0,
                    floor_db: to_db(p.s_off_tb / p.s_off_cs),
                    drives_db: signals
                        .iter()
                        .map(|sig| to_db((p.s_off_tb + sig * shape) / p.s_off_cs))
                        .collect(),
                });
            }
            quadrants.push(Fig3Quadrant {
                quadrant: q,
                floor_db: to_db(p.s_off_tb / p.s_off_cs),
                signals,
            });
        }
        Ok(Fig3 {
            drives_mv: f.drives_mv.clone(),
            rows,
            quadrants,
        })
    }

    /// Analytic and sampled sweeps for all pairs with their threshold reports.
    pub fn fig4(&self, averages: usize, seed: u64) -> Result<Fig4> {
        let analytic = self.sweeps()?;
        let sampled = self.sampled_sweeps(averages, seed)?;
        let reports = analytic
            .iter()
            .map(EnhancementReport::from_sweep)
            .collect::<Result<Vec<_>>>()?;
        let sampled_reports = sampled
            .iter()
            .map(EnhancementReport::from_sweep)
            .collect::<Result<Vec<_>>>()?;
        Ok(Fig4 {
            averages,
            seed,
            analytic,
            sampled,
            reports,
            sampled_reports,
        })
    }
}

fn stage(label: &str, op: StageOp, readout: Readout) -> Stage {
    Stage {
        label: label.into(),
        op,
        readout,
    }
}

/// The sensor windows as seen by the beams. Sensor transmission is applied
/// separately, so every window is left fully open here.
pub fn sensor_layout(s: &Scenario) -> QuadrantLayout {
    QuadrantLayout::new(s.layout.window_size, s.layout.gap, s.layout.tilt_deg)
}

/// Oracle-suite settings drawn from the scenario's source, beams and stages.
pub fn verify_options(s: &Scenario) -> VerifyOptions {
    VerifyOptions {
        samples: s.verify.samples,
        grid_samples: s.verify.grid_samples,
        seed: s.seed,
        gain: s.source.gain,
        excess_correlated: s.source.excess_correlated,
        excess_uncorrelated: s.source.excess_uncorrelated,
        waist_p: s.beams.probe_diameter,
        waist_c: s.beams.conj_diameter,
        cell_size: s.verify.cell_size,
        layout: sensor_layout(s),
        eta_p: s.stages.sensor_transmission,
        eta_c: s.stages.mask_transmission,
        ..VerifyOptions::default()
    }
}

fn razor_straddle(m: &TwinBeamMoments, grid: &CoherenceGrid) -> Result<f64> {
    Ok(quadrant_cut(m, grid, &QuadrantLayout::razor_blades(), 0)?.straddle_fraction)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub stage: String,
    pub squeezing_db: f64,
    pub gain: f64,
    /// `20 log10(1/g)`.
    pub attenuation_db: f64,
    /// `10 log10(1/g)`.
    pub attenuation_power_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// Applied before every readout.
    pub quantum_efficiency: f64,
    pub rows: Vec<BudgetRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Row {
    pub quadrant: usize,
    pub frequency_hz: f64,
    pub snl_db: f64,
    pub floor_db: f64,
    /// One trace per drive level, dB relative to the shot-noise level.
    pub drives_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Quadrant {
    pub quadrant: usize,
    pub floor_db: f64,
    /// Signal power at each drive level.
    pub signals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3 {
    pub drives_mv: Vec<f64>,
    pub rows: Vec<Fig3Row>,
    pub quadrants: Vec<Fig3Quadrant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4 {
    pub averages: usize,
    pub seed: u64,
    pub analytic: Vec<PairSweep>,
    pub sampled: Vec<PairSweep>,
    pub reports: Vec<EnhancementReport>,
    pub sampled_reports: Vec<EnhancementReport>,
}

impl Fig4 {
    /// Reports of the four matched pairs.
    pub fn correlated(&self) -> Vec<&EnhancementReport> {
        self.analytic
            .iter()
            .zip(&self.reports)
            .filter(|(s, _)| s.pair.correlated)
            .map(|(_, r)| r)
            .collect()
    }
}

/// Transmission and transduction of each sensor over a wavelength range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceScan {
    pub wavelengths: Vec<f64>,
    pub transmission: Vec<[f64; 4]>,
    pub slope: Vec<[f64; 4]>,
    /// Values at the probe wavelength.
    pub at_probe: [f64; 4],
    pub slope_at_probe: [f64; 4],
}

pub fn resonance_scan(s: &Scenario, from: f64, to: f64, step: f64) -> Result<ResonanceScan> {
    s.validate()?;
    if !(from < to && step > 0.0) {
        return Err(Error::validation("scan", "need from < to and step > 0"));
    }
    let res = s.resonance_array();
    let n = ((to - from) / step).round() as usize;
    let wavelengths: Vec<f64> = (0..=n).map(|k| from + k as f64 * step).collect();
    let lambda = s.modulation.wavelength_nm;
    Ok(ResonanceScan {
        transmission: wavelengths
            .iter()
            .map(|&l| res.map(|r| transmission_at(&r, l)))
            .collect(),
        slope: wavelengths
            .iter()
            .map(|&l| res.map(|r| transduction_slope(&r, l)))
            .collect(),
        wavelengths,
        at_probe: res.map(|r| transmission_at(&r, lambda)),
        slope_at_probe: res.map(|r| transduction_slope(&r, lambda)),
    })
}

pub fn optimize_beam(s: &Scenario) -> Result<WaistOptimum> {
    s.validate()?;
    optimize_waist(&s.layout.quadrants(), &WaistSearch::default(), &QuadratureConfig::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCalibration {
    pub source: SourceCalibration,
    pub cell_size: f64,
    pub razor_straddle: f64,
    pub volts_to_index: [f64; 4],
    pub thresholds_mv: [f64; 4],
}

/// Smallest and largest cell sizes tried when matching the cut straddle.
const CELL_RANGE: (f64, f64) = (0.01, 200.0);

/// Cell size whose razor-blade cut straddles the fraction `target`.
pub fn cell_size_for_straddle(s: &Scenario, m: &TwinBeamMoments, target: f64) -> Result<f64> {
    let straddle = |d: f64| -> Result<f64> {
        let grid = build_coherence_grid(s.beams.probe_diameter, s.beams.conj_diameter, d, s.coherence.extent)?;
        razor_straddle(m, &grid)
    };
    let (mut lo, mut hi) = CELL_RANGE;
    if target <= straddle(lo)? {
        return Ok(lo);
    }
    if target >= straddle(hi)? {
        return Err(Error::Search(format!(
            "straddle fraction {target} needs cells larger than {hi} µm"
        )));
    }
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        if straddle(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-10 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Fits the source and losses to the stage targets, sets the coherence cell
/// to reproduce the fitted straddle, and scales each sensor coefficient so
/// the twin-beam thresholds land on the targets.
pub fn calibrate_scenario(base: &Scenario) -> Result<(Scenario, ScenarioCalibration)> {
    base.validate()?;
    let st = &base.stages;
    let mut chain = measurement_chain(st.quantum_efficiency, st.sensor_transmission, st.mask_transmission);
    chain.seed_flux = base.source.seed_flux;
    let fit = calibrate_source(&chain, &base.calibration.targets, &CalibrationOptions::default())?;
    let mut s = base.clone();
    s.source.gain = fit.params.gain;
    s.source.excess_correlated = fit.params.excess_correlated;
    s.source.excess_uncorrelated = fit.params.excess_uncorrelated;
    if let Some(eta) = fit.fitted_eta("optics") {
        s.stages.optics_transmission = eta;
    }
    let after = apply_loss(
        &fwm_moments(&s.source.params())?,
        &LossChannel::symmetric(s.stages.optics_transmission),
    )?;
    let target = fit.fitted_straddle("cut").unwrap_or(0.0);
    s.coherence.cell_size = cell_size_for_straddle(&s, &after, target)?;
    if let Some(targets) = s.analysis.target_thresholds_mv {
        // threshold scales as 1/kappa, so one rescaling is exact; a second
        // pass only removes rounding
        for _ in 0..2 {
            let e = Experiment::new(&s)?;
            for q in 0..4 {
                let p = e.pair(q, q)?;
                let v = (p.s_off_tb / p.signal_per_mv2).sqrt();
                s.modulation.volts_to_index[q] *= v / targets[q];
            }
        }
    }
    let e = Experiment::new(&s)?;
    let mut thresholds = [0.0; 4];
    for (q, t) in thresholds.iter_mut().enumerate() {
        let p = e.pair(q, q)?;
        *t = (p.s_off_tb / p.signal_per_mv2).sqrt();
    }
    let razor_straddle = e.razor_cut_straddle()?;
    Ok((
        s.clone(),
        ScenarioCalibration {
            source: fit,
            cell_size: s.coherence.cell_size,
            razor_straddle,
            volts_to_index: s.modulation.volts_to_index,
            thresholds_mv: thresholds,
        },
    ))
}
