//! Beam geometry and loss: Gaussian-beam transmission through the tilted
//! quadrant array, beam-splitter loss of photon-statistics moments, and the
//! correlation loss from cutting the beams into quadrants.

mod cut;
mod geometry;
mod transmission;

pub use cut::{quadrant_cut, quadrant_cut_continuum, CutResult};
pub use geometry::{gaussian_interval_mass, Rect};
pub use transmission::{
    analytic_window_fractions, energy_budget, optimize_waist, quadrant_transmission,
    EnergyBudget, QuadratureConfig, TransmissionReport, WaistOptimum, WaistSearch,
};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::source::TwinBeamMoments;

/// Axis-aligned Gaussian intensity profile in the sensing plane (µm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBeam {
    pub sigma_x: f64,
    pub sigma_y: f64,
    #[serde(default)]
    pub center: (f64, f64),
}

impl GaussianBeam {
    /// Round beam from its 1/e^2 intensity diameter, `D = 4 sigma`.
    pub fn from_diameter(diameter: f64) -> Self {
        Self {
            sigma_x: diameter / 4.0,
            sigma_y: diameter / 4.0,
            center: (0.0, 0.0),
        }
    }

    pub fn diameter_x(&self) -> f64 {
        4.0 * self.sigma_x
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.sigma_x.is_finite() && self.sigma_x > 0.0, "sigma_x", || {
            format!("must be > 0, got {}", self.sigma_x)
        })?;
        ensure(self.sigma_y.is_finite() && self.sigma_y > 0.0, "sigma_y", || {
            format!("must be > 0, got {}", self.sigma_y)
        })?;
        ensure(
            self.center.0.is_finite() && self.center.1.is_finite(),
            "center",
            || "must be finite".into(),
        )
    }

    /// Power fraction inside `rect`.
    pub fn mass(&self, rect: &Rect) -> f64 {
        gaussian_interval_mass(rect.x0, rect.x1, self.center.0, self.sigma_x)
            * gaussian_interval_mass(rect.y0, rect.y1, self.center.1, self.sigma_y)
    }
}

/// Four square windows separated by a cross-shaped opaque gap, tilted about
/// the y axis. Windows are numbered counter-clockwise from the +x,+y quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrantLayout {
    /// Window side length (µm). May be infinite for razor-blade cuts.
    pub window_size: f64,
    pub gap: f64,
    #[serde(default)]
    pub tilt_deg: f64,
    #[serde(default = "unit_transmissions")]
    pub window_transmissions: [f64; 4],
}

fn unit_transmissions() -> [f64; 4] {
    [1.0; 4]
}

/// Quadrant signs (x, y) in window order.
const QUADRANT_SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];

impl QuadrantLayout {
    pub fn new(window_size: f64, gap: f64, tilt_deg: f64) -> Self {
        Self {
            window_size,
            gap,
            tilt_deg,
            window_transmissions: unit_transmissions(),
        }
    }

    /// Sensor array of the experiment: 200 µm windows, 20 µm gaps, 26° tilt.
    pub fn sensor_array() -> Self {
        Self::new(200.0, 20.0, 26.0)
    }

    /// Two razor blades at right angles through the beam center.
    pub fn razor_blades() -> Self {
        Self::new(f64::INFINITY, 0.0, 0.0)
    }

    pub fn with_transmissions(mut self, t: [f64; 4]) -> Self {
        self.window_transmissions = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            !self.window_size.is_nan() && self.window_size > 0.0,
            "window_size",
            || format!("must be > 0, got {}", self.window_size),
        )?;
        ensure(self.gap.is_finite() && self.gap >= 0.0, "gap", || {
            format!("must be >= 0, got {}", self.gap)
        })?;
        ensure(
            self.tilt_deg.is_finite() && (0.0..90.0).contains(&self.tilt_deg),
            "tilt_deg",
            || format!("must be in [0, 90), got {}", self.tilt_deg),
        )?;
        for (i, t) in self.window_transmissions.iter().enumerate() {
            ensure((0.0..=1.0).contains(t), &format!("window_transmissions[{i}]"), || {
                format!("must be in [0, 1], got {t}")
            })?;
        }
        Ok(())
    }

    fn projection(&self) -> f64 {
        self.tilt_deg.to_radians().cos()
    }

    /// Footprint of window `q` in the sensing plane, x features compressed by
    /// cos(tilt).
    pub fn window_rect(&self, q: usize) -> Rect {
        let (sx, sy) = QUADRANT_SIGNS[q];
        let c = self.projection();
        let inner = self.gap / 2.0;
        let outer = inner + self.window_size;
        let span = |s: f64, lo: f64, hi: f64| if s > 0.0 { (lo, hi) } else { (-hi, -lo) };
        let (x0, x1) = span(sx, inner * c, outer * c);
        let (y0, y1) = span(sy, inner, outer);
        Rect { x0, x1, y0, y1 }
    }

    /// Bounding square of all four windows.
    pub fn outer_rect(&self) -> Rect {
        let c = self.projection();
        let half = self.gap / 2.0 + self.window_size;
        Rect {
            x0: -half * c,
            x1: half * c,
            y0: -half,
            y1: half,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            window_size: self.window_size * k,
            gap: self.gap * k,
            ..*self
        }
    }
}

/// Power transmissions of the probe and conjugate paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossChannel {
    pub eta_p: f64,
    pub eta_c: f64,
}

impl LossChannel {
    pub const LOSSLESS: LossChannel = LossChannel {
        eta_p: 1.0,
        eta_c: 1.0,
    };

    pub fn new(eta_p: f64, eta_c: f64) -> Self {
        Self { eta_p, eta_c }
    }

    pub fn symmetric(eta: f64) -> Self {
        Self::new(eta, eta)
    }

    pub fn then(&self, other: &LossChannel) -> Self {
        Self::new(self.eta_p * other.eta_p, self.eta_c * other.eta_c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure((0.0..=1.0).contains(&self.eta_p), "eta_p", || {
            format!("must be in [0, 1], got {}", self.eta_p)
        })?;
        ensure((0.0..=1.0).contains(&self.eta_c), "eta_c", || {
            format!("must be in [0, 1], got {}", self.eta_c)
        })
    }
}

/// Beam-splitter loss on each beam. Normally ordered noise `var - mean`
/// scales with eta^2, the shot-noise part with eta.
pub fn apply_loss(m: &TwinBeamMoments, ch: &LossChannel) -> Result<TwinBeamMoments> {
    m.validate()?;
    ch.validate()?;
    let thin = |mean: f64, var: f64, eta: f64| eta * eta * (var - mean) + eta * mean;
    Ok(TwinBeamMoments {
        mean_p: ch.eta_p * m.mean_p,
        mean_c: ch.eta_c * m.mean_c,
        var_p: thin(m.mean_p, m.var_p, ch.eta_p),
        var_c: thin(m.mean_c, m.var_c, ch.eta_c),
        cov: ch.eta_p * ch.eta_c * m.cov,
    })
}
