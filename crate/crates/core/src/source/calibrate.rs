use serde::{Deserialize, Serialize};

use super::{fwm_moments, FwmSourceParams, TwinBeamMoments};
use crate::detection::{detect, GainPolicy};
use crate::error::{Error, Result};
use crate::lm::{minimize, LmOptions};
use crate::optics::{apply_loss, LossChannel};
use crate::units::attenuation_db;

/// How a stage is read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// g = 1.
    Balanced,
    /// g minimizing the difference noise.
    Optimal,
}

/// Selection of one quadrant of both beams: every moment scales with the
/// contained fraction, covariance additionally with `1 - straddle`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutStage {
    pub contained: f64,
    /// `None` leaves the straddle fraction to the fit.
    pub straddle: Option<f64>,
}

/// Operation applied to the output of the previous stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageOp {
    /// The source itself.
    Identity,
    Loss { eta_p: f64, eta_c: f64 },
    /// Symmetric loss with a fitted transmission.
    FreeLoss,
    Cut(CutStage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub label: String,
    pub op: StageOp,
    pub readout: Readout,
}

/// Ordered measurement chain. Detector efficiency is applied before every
/// readout and does not propagate to later stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageChain {
    pub quantum_efficiency: f64,
    pub seed_flux: f64,
    pub stages: Vec<Stage>,
}

/// Observed squeezing (dB) and optionally attenuation (amplitude dB) of a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTarget {
    pub stage: String,
    pub squeezing_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_db: Option<f64>,
    /// Accepted |model - target| for squeezing.
    pub tolerance_db: f64,
    /// Accepted |model - target| for attenuation.
    #[serde(default = "default_gain_tolerance")]
    pub gain_tolerance_db: f64,
}

fn default_gain_tolerance() -> f64 {
    1.0
}

impl StageTarget {
    pub fn new(stage: &str, squeezing_db: f64, tolerance_db: f64) -> Self {
        Self {
            stage: stage.into(),
            squeezing_db,
            gain_db: None,
            tolerance_db,
            gain_tolerance_db: default_gain_tolerance(),
        }
    }

    pub fn with_gain(mut self, gain_db: f64, tolerance_db: f64) -> Self {
        self.gain_db = Some(gain_db);
        self.gain_tolerance_db = tolerance_db;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcessPolicy {
    /// Zero excess first, excess noise only when a tolerance is missed.
    Auto,
    Never,
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub excess: ExcessPolicy,
    /// Upper bound on G. Only weakly identified once excess noise is free.
    pub gain_max: f64,
    pub excess_max: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            excess: ExcessPolicy::Auto,
            gain_max: 10.0,
            excess_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResidual {
    pub stage: String,
    pub target_db: f64,
    pub model_db: f64,
    pub residual_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_gain_db: Option<f64>,
    pub model_gain_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_residual_db: Option<f64>,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCalibration {
    pub params: FwmSourceParams,
    /// The chain with every fitted transmission and straddle fraction filled in.
    pub chain: StageChain,
    pub residuals: Vec<StageResidual>,
    pub used_excess: bool,
    pub cost: f64,
    pub iterations: usize,
}

impl SourceCalibration {
    pub fn within_tolerance(&self) -> bool {
        self.residuals.iter().all(|r| r.within_tolerance)
    }

    pub fn fitted_eta(&self, label: &str) -> Option<f64> {
        self.chain.stages.iter().find(|s| s.label == label).and_then(|s| match s.op {
            StageOp::Loss { eta_p, .. } => Some(eta_p),
            _ => None,
        })
    }

    pub fn fitted_straddle(&self, label: &str) -> Option<f64> {
        self.chain.stages.iter().find(|s| s.label == label).and_then(|s| match s.op {
            StageOp::Cut(c) => c.straddle,
            _ => None,
        })
    }
}

/// Squeezing and attenuation observed at every stage of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageReading {
    pub squeezing_db: f64,
    pub gain_db: f64,
    pub moments: TwinBeamMoments,
}

impl StageChain {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.quantum_efficiency) || self.quantum_efficiency == 0.0 {
            return Err(Error::validation(
                "quantum_efficiency",
                format!("must be in (0, 1], got {}", self.quantum_efficiency),
            ));
        }
        if self.seed_flux.is_nan() || self.seed_flux <= 0.0 {
            return Err(Error::validation("seed_flux", "must be > 0"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let field = format!("stages[{i}]");
            match s.op {
                StageOp::Loss { eta_p, eta_c } => LossChannel::new(eta_p, eta_c)
                    .validate()
                    .map_err(|e| e.within(&field))?,
                StageOp::Cut(c) => {
                    if !(c.contained > 0.0 && c.contained <= 1.0) {
                        return Err(Error::validation(format!("{field}.contained"), "must be in (0, 1]"));
                    }
                    if let Some(st) = c.straddle {
                        if !(0.0..=1.0).contains(&st) {
                            return Err(Error::validation(format!("{field}.straddle"), "must be in [0, 1]"));
                        }
                    }
                }
                StageOp::Identity | StageOp::FreeLoss => {}
            }
        }
        Ok(())
    }

    fn free_slots(&self) -> Vec<(usize, Bound)> {
        self.stages
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s.op {
                StageOp::FreeLoss => Some((i, Bound::Eta)),
                StageOp::Cut(CutStage { straddle: None, .. }) => Some((i, Bound::Straddle)),
                _ => None,
            })
            .collect()
    }

    /// Copy with the free slots replaced by `values` (in stage order).
    fn filled(&self, values: &[f64]) -> StageChain {
        let mut out = self.clone();
        for ((i, _), v) in self.free_slots().into_iter().zip(values) {
            out.stages[i].op = match out.stages[i].op {
                StageOp::FreeLoss => StageOp::Loss { eta_p: *v, eta_c: *v },
                StageOp::Cut(c) => StageOp::Cut(CutStage {
                    straddle: Some(*v),
                    ..c
                }),
                op => op,
            };
        }
        out
    }

    /// Propagates source moments through the chain and reads out each stage.
    /// All free slots must be filled.
    pub fn evaluate(&self, params: &FwmSourceParams) -> Result<Vec<StageReading>> {
        let mut m = fwm_moments(params)?;
        let mut out = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            m = match s.op {
                StageOp::Identity => m,
                StageOp::Loss { eta_p, eta_c } => apply_loss(&m, &LossChannel::new(eta_p, eta_c))?,
                StageOp::Cut(c) => {
                    let st = c.straddle.ok_or_else(|| {
                        Error::validation(format!("{}.straddle", s.label), "unfitted straddle fraction")
                    })?;
                    TwinBeamMoments {
                        mean_p: c.contained * m.mean_p,
                        mean_c: c.contained * m.mean_c,
                        var_p: c.contained * m.var_p,
                        var_c: c.contained * m.var_c,
                        cov: c.contained * (1.0 - st) * m.cov,
                    }
                }
                StageOp::FreeLoss => {
                    return Err(Error::validation(format!("{}.eta", s.label), "unfitted transmission"))
                }
            };
            let policy = match s.readout {
                Readout::Balanced => GainPolicy::Fixed(1.0),
                Readout::Optimal => GainPolicy::Optimal,
            };
            let r = detect(&m, self.quantum_efficiency, policy)?;
            out.push(StageReading {
                squeezing_db: r.ratio_db,
                gain_db: attenuation_db(r.gain),
                moments: m,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
enum Bound {
    Eta,
    Straddle,
}

/// Penalty residual for parameter sets the model rejects.
const PENALTY_DB: f64 = 100.0;

/// Fits source gain, excess noise, and the chain's free transmissions and
/// straddle fractions to the observed stage squeezing, least squares in dB
/// with equal weights.
pub fn calibrate_source(
    chain: &StageChain,
    targets: &[StageTarget],
    opts: &CalibrationOptions,
) -> Result<SourceCalibration> {
    chain.validate()?;
    check_targets(chain, targets)?;
    let index: Vec<usize> = targets
        .iter()
        .map(|t| chain.stages.iter().position(|s| s.label == t.stage).unwrap())
        .collect();

    let slots = chain.free_slots();
    let observables = targets.len() + targets.iter().filter(|t| t.gain_db.is_some()).count();

    let fit = |excess: bool, seeds: &[Vec<f64>]| -> Fit {
        // x = [G, (zc, zu), free slots...]
        let offset = if excess { 3 } else { 1 };
        let mut lower = vec![1.0];
        let mut upper = vec![opts.gain_max];
        if excess {
            lower.extend([0.0, 0.0]);
            upper.extend([opts.excess_max, opts.excess_max]);
        }
        for (_, b) in &slots {
            match b {
                Bound::Eta => {
                    lower.push(1e-4);
                    upper.push(1.0);
                }
                Bound::Straddle => {
                    lower.push(0.0);
                    upper.push(0.999);
                }
            }
        }
        let decode = |x: &[f64]| -> (FwmSourceParams, StageChain) {
            let (zc, zu) = if excess { (x[1], x[2]) } else { (0.0, 0.0) };
            let p = FwmSourceParams::ideal(x[0], chain.seed_flux).with_excess(zc, zu);
            (p, chain.filled(&x[offset..]))
        };
        let residual = |x: &[f64]| -> Vec<f64> {
            let (p, c) = decode(x);
            match c.evaluate(&p) {
                Ok(readings) => residual_vector(&readings, targets, &index),
                Err(_) => vec![PENALTY_DB; observables],
            }
        };
        let mut best: Option<(Vec<f64>, f64, usize)> = None;
        for seed in seeds {
            let x0: Vec<f64> = seed.iter().copied().take(lower.len()).collect();
            let s = minimize(residual, &x0, &lower, &upper, &LmOptions::default());
            if best.as_ref().is_none_or(|b| s.cost < b.1) {
                best = Some((s.x, s.cost, s.iterations));
            }
        }
        let (x, cost, iterations) = best.expect("at least one start");
        let (params, filled) = decode(&x);
        Fit {
            x,
            params,
            chain: filled,
            cost,
            iterations,
            excess,
        }
    };

    let starts = |excess: bool, from: Option<&[f64]>| -> Vec<Vec<f64>> {
        let mut v = Vec::new();
        let tail: Vec<f64> = slots
            .iter()
            .map(|(_, b)| match b {
                Bound::Eta => 0.9,
                Bound::Straddle => 0.05,
            })
            .collect();
        let gains = [1.5f64, 2.2, 3.5, 6.0];
        let excesses: &[(f64, f64)] = if excess {
            &[(0.01, 0.001), (0.1, 0.01), (0.5, 0.1)]
        } else {
            &[(0.0, 0.0)]
        };
        for g in gains {
            for (zc, zu) in excesses {
                let mut x = vec![g.min(opts.gain_max)];
                if excess {
                    x.extend([*zc, *zu]);
                }
                x.extend(&tail);
                v.push(x);
            }
        }
        if let Some(prev) = from {
            // continue from the zero-excess optimum
            let mut x = vec![prev[0]];
            x.extend([1e-3, 1e-4]);
            x.extend(&prev[1..]);
            v.insert(0, x);
        }
        v
    };

    let finished = |f: Fit| -> Result<SourceCalibration> {
        let readings = f.chain.evaluate(&f.params)?;
        let residuals = describe(&readings, targets, &index);
        Ok(SourceCalibration {
            params: f.params,
            chain: f.chain,
            residuals,
            used_excess: f.excess,
            cost: f.cost,
            iterations: f.iterations,
        })
    };

    match opts.excess {
        ExcessPolicy::Never => finished(fit(false, &starts(false, None))),
        ExcessPolicy::Always => finished(fit(true, &starts(true, None))),
        ExcessPolicy::Auto => {
            let plain = fit(false, &starts(false, None));
            let x0 = plain.x.clone();
            let first = finished(plain)?;
            if first.within_tolerance() {
                return Ok(first);
            }
            let second = finished(fit(true, &starts(true, Some(&x0))))?;
            let score = |c: &SourceCalibration| c.residuals.iter().filter(|r| !r.within_tolerance).count();
            if score(&second) < score(&first)
                || (score(&second) == score(&first) && second.cost < first.cost)
            {
                Ok(second)
            } else {
                Ok(first)
            }
        }
    }
}

struct Fit {
    x: Vec<f64>,
    params: FwmSourceParams,
    chain: StageChain,
    cost: f64,
    iterations: usize,
    excess: bool,
}

fn residual_vector(readings: &[StageReading], targets: &[StageTarget], index: &[usize]) -> Vec<f64> {
    let mut r = Vec::with_capacity(targets.len() * 2);
    for (t, &i) in targets.iter().zip(index) {
        let v = readings[i].squeezing_db - t.squeezing_db;
        r.push(if v.is_finite() { v } else { PENALTY_DB });
        if let Some(g) = t.gain_db {
            let v = readings[i].gain_db - g;
            r.push(if v.is_finite() { v } else { PENALTY_DB });
        }
    }
    r
}

fn describe(readings: &[StageReading], targets: &[StageTarget], index: &[usize]) -> Vec<StageResidual> {
    targets
        .iter()
        .zip(index)
        .map(|(t, &i)| {
            let r = &readings[i];
            let residual_db = r.squeezing_db - t.squeezing_db;
            let gain_residual_db = t.gain_db.map(|g| r.gain_db - g);
            let within_tolerance = residual_db.abs() <= t.tolerance_db
                && gain_residual_db.is_none_or(|g| g.abs() <= t.gain_tolerance_db);
            StageResidual {
                stage: t.stage.clone(),
                target_db: t.squeezing_db,
                model_db: r.squeezing_db,
                residual_db,
                target_gain_db: t.gain_db,
                model_gain_db: r.gain_db,
                gain_residual_db,
                within_tolerance,
            }
        })
        .collect()
}

/// Rejects target sets no parameter choice can reproduce: loss and cutting
/// never improve balanced squeezing, so a later balanced stage cannot be more
/// squeezed than an earlier one.
fn check_targets(chain: &StageChain, targets: &[StageTarget]) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::FitInfeasible {
            reason: "no targets".into(),
            diagnostics: vec![],
        });
    }
    let mut diagnostics = Vec::new();
    let mut located = Vec::new();
    for t in targets {
        match chain.stages.iter().position(|s| s.label == t.stage) {
            Some(i) => located.push((i, t)),
            None => diagnostics.push(format!("target `{}` names no stage in the chain", t.stage)),
        }
        if !t.squeezing_db.is_finite() {
            diagnostics.push(format!("target `{}` is not finite", t.stage));
        }
    }
    if !diagnostics.is_empty() {
        return Err(Error::FitInfeasible {
            reason: "targets do not match the chain".into(),
            diagnostics,
        });
    }
    located.sort_by_key(|(i, _)| *i);
    let balanced: Vec<_> = located
        .iter()
        .filter(|(i, _)| chain.stages[*i].readout == Readout::Balanced)
        .collect();
    for w in balanced.windows(2) {
        let ((i, a), (j, b)) = (w[0], w[1]);
        let symmetric = chain.stages[i + 1..=*j].iter().all(|s| match s.op {
            StageOp::Loss { eta_p, eta_c } => eta_p == eta_c,
            _ => true,
        });
        if symmetric && b.squeezing_db < a.squeezing_db - a.tolerance_db - b.tolerance_db {
            diagnostics.push(format!(
                "`{}` ({} dB) is more squeezed than the earlier `{}` ({} dB)",
                b.stage, b.squeezing_db, a.stage, a.squeezing_db
            ));
        }
    }
    if diagnostics.is_empty() {
        Ok(())
    } else {
        Err(Error::FitInfeasible {
            reason: "loss cannot create squeezing".into(),
            diagnostics,
        })
    }
}

/// The measurement chain of the experiment: source, imaging optics with an
/// unknown transmission, razor-blade quadrant selection with an unknown
/// straddle fraction, and the sensor/mask transmissions read out with the
/// optimal attenuation.
pub fn measurement_chain(quantum_efficiency: f64, eta_sensor: f64, eta_mask: f64) -> StageChain {
    let stage = |label: &str, op, readout| Stage {
        label: label.into(),
        op,
        readout,
    };
    StageChain {
        quantum_efficiency,
        seed_flux: 1.0,
        stages: vec![
            stage("source", StageOp::Identity, Readout::Balanced),
            stage("optics", StageOp::FreeLoss, Readout::Balanced),
            stage(
                "cut",
                StageOp::Cut(CutStage {
                    contained: 0.25,
                    straddle: None,
                }),
                Readout::Balanced,
            ),
            stage(
                "sensor",
                StageOp::Loss {
                    eta_p: eta_sensor,
                    eta_c: eta_mask,
                },
                Readout::Optimal,
            ),
        ],
    }
}

/// Observed values along [`measurement_chain`].
pub fn observed_targets() -> Vec<StageTarget> {
    vec![
        StageTarget::new("source", -5.16, 0.1),
        StageTarget::new("optics", -4.75, 0.1),
        StageTarget::new("cut", -3.75, 0.1),
        StageTarget::new("sensor", -1.92, 0.3).with_gain(5.2, 1.0),
    ]
}
