use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::geometry::overlap;
use super::{GaussianBeam, QuadrantLayout};
use crate::error::{Error, Result};

/// Fixed-grid midpoint quadrature over `center ± half_width_sigmas * sigma`
/// in both axes. Window edges are resolved exactly: every grid cell is
/// weighted by the fraction of its area inside the window, which keeps the
/// error second order in the step `2 * half_width_sigmas * sigma / resolution`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub resolution: usize,
    pub half_width_sigmas: f64,
    /// Maximum allowed difference between full and half resolution results.
    pub richardson_tolerance: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            resolution: 2048,
            half_width_sigmas: 4.0,
            richardson_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionReport {
    /// Fraction of beam power falling on each window.
    pub window_fractions: [f64; 4],
    /// Transmitted power: window fractions weighted by window transmissions.
    pub total: f64,
    /// |full - half resolution| over all reported quantities.
    pub richardson_delta: f64,
}

struct AxisGrid {
    weights: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    step: f64,
}

impl AxisGrid {
    fn new(center: f64, sigma: f64, half_width: f64, n: usize) -> Self {
        let span = half_width * sigma;
        let step = 2.0 * span / n as f64;
        let norm = step / (sigma * (2.0 * PI).sqrt());
        let mut weights = Vec::with_capacity(n);
        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        for i in 0..n {
            let a = center - span + i as f64 * step;
            let mid = a + 0.5 * step;
            let z = (mid - center) / sigma;
            weights.push(norm * (-0.5 * z * z).exp());
            lo.push(a);
            hi.push(a + step);
        }
        Self {
            weights,
            lo,
            hi,
            step,
        }
    }

    /// Fraction of each grid interval inside `[a, b]`.
    fn coverage(&self, a: f64, b: f64) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| overlap(l, h, a, b) / self.step)
            .collect()
    }
}

/// Power fraction on each window by 2-D quadrature at the given resolution.
/// Rows are summed in parallel and combined in row order, so the result does
/// not depend on the worker count.
fn integrate_windows(
    beam: &GaussianBeam,
    layout: &QuadrantLayout,
    resolution: usize,
    half_width: f64,
) -> [f64; 4] {
    let gx = AxisGrid::new(beam.center.0, beam.sigma_x, half_width, resolution);
    let gy = AxisGrid::new(beam.center.1, beam.sigma_y, half_width, resolution);
    let rects: Vec<_> = (0..4).map(|q| layout.window_rect(q)).collect();
    let cov_x: Vec<Vec<f64>> = rects.iter().map(|r| gx.coverage(r.x0, r.x1)).collect();
    let cov_y: Vec<Vec<f64>> = rects.iter().map(|r| gy.coverage(r.y0, r.y1)).collect();

    let rows: Vec<[f64; 4]> = (0..resolution)
        .into_par_iter()
        .map(|j| {
            let wy = gy.weights[j];
            let mut acc = [0.0; 4];
            for (q, slot) in acc.iter_mut().enumerate() {
                let cy = cov_y[q][j];
                if cy == 0.0 {
                    continue;
                }
                let cx = &cov_x[q];
                let mut s = 0.0;
                for i in 0..resolution {
                    s += gx.weights[i] * wy * cx[i] * cy;
                }
                *slot = s;
            }
            acc
        })
        .collect();

    let mut out = [0.0; 4];
    for row in rows {
        for q in 0..4 {
            out[q] += row[q];
        }
    }
    out
}

fn weighted_total(fractions: &[f64; 4], layout: &QuadrantLayout) -> f64 {
    fractions
        .iter()
        .zip(&layout.window_transmissions)
        .map(|(f, t)| f * t)
        .sum()
}

/// Fraction of a Gaussian beam transmitted through the quadrant windows.
pub fn quadrant_transmission(
    beam: &GaussianBeam,
    layout: &QuadrantLayout,
    cfg: &QuadratureConfig,
) -> Result<TransmissionReport> {
    beam.validate().map_err(|e| e.within("beam"))?;
    layout.validate().map_err(|e| e.within("layout"))?;
    if cfg.resolution < 4 || !cfg.resolution.is_multiple_of(2) {
        return Err(Error::validation(
            "quadrature.resolution",
            "must be an even number >= 4",
        ));
    }
    let full = integrate_windows(beam, layout, cfg.resolution, cfg.half_width_sigmas);
    let half = integrate_windows(beam, layout, cfg.resolution / 2, cfg.half_width_sigmas);
    let total = weighted_total(&full, layout);
    let delta = full
        .iter()
        .zip(&half)
        .map(|(a, b)| (a - b).abs())
        .fold((total - weighted_total(&half, layout)).abs(), f64::max);
    if delta > cfg.richardson_tolerance {
        return Err(Error::Integration(format!(
            "half-resolution check differs by {delta:.2e} (> {:.1e})",
            cfg.richardson_tolerance
        )));
    }
    Ok(TransmissionReport {
        window_fractions: full,
        total,
        richardson_delta: delta,
    })
}

/// Window power fractions from the error function, independent of the
/// quadrature route.
pub fn analytic_window_fractions(beam: &GaussianBeam, layout: &QuadrantLayout) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (q, slot) in out.iter_mut().enumerate() {
        *slot = beam.mass(&layout.window_rect(q));
    }
    out
}

/// Where the beam power goes: windows, the opaque gap cross, and outside the
/// array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBudget {
    pub windows: [f64; 4],
    pub gap: f64,
    pub tail: f64,
}

impl EnergyBudget {
    pub fn sum(&self) -> f64 {
        self.windows.iter().sum::<f64>() + self.gap + self.tail
    }
}

/// Window fractions by quadrature; gap and tail by the error function.
pub fn energy_budget(
    beam: &GaussianBeam,
    layout: &QuadrantLayout,
    cfg: &QuadratureConfig,
) -> Result<EnergyBudget> {
    let report = quadrant_transmission(beam, layout, cfg)?;
    let outer = beam.mass(&layout.outer_rect());
    let windows_analytic: f64 = analytic_window_fractions(beam, layout).iter().sum();
    Ok(EnergyBudget {
        windows: report.window_fractions,
        gap: outer - windows_analytic,
        tail: 1.0 - outer,
    })
}

/// Range and scan step for the beam-diameter search (µm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaistSearch {
    pub min_diameter: f64,
    pub max_diameter: f64,
    pub step: f64,
}

impl Default for WaistSearch {
    fn default() -> Self {
        Self {
            min_diameter: 100.0,
            max_diameter: 1000.0,
            step: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaistOptimum {
    pub diameter: f64,
    pub total: f64,
    /// Scanned `(diameter, total)` pairs.
    pub curve: Vec<(f64, f64)>,
    /// True when the scanned curve rises then falls with a single peak.
    pub unimodal: bool,
}

const GOLDEN_TOL: f64 = 1e-3;

/// Round-beam diameter maximizing the transmitted power. Coarse scan, then
/// golden-section refinement around the best scan point. A flat objective
/// returns the smallest diameter.
pub fn optimize_waist(
    layout: &QuadrantLayout,
    search: &WaistSearch,
    cfg: &QuadratureConfig,
) -> Result<WaistOptimum> {
    layout.validate().map_err(|e| e.within("layout"))?;
    if !(search.min_diameter > 0.0
        && search.max_diameter > search.min_diameter
        && search.step > 0.0)
    {
        return Err(Error::validation(
            "search",
            "need 0 < min_diameter < max_diameter and step > 0",
        ));
    }
    let objective = |d: f64| {
        let f = integrate_windows(
            &GaussianBeam::from_diameter(d),
            layout,
            cfg.resolution,
            cfg.half_width_sigmas,
        );
        weighted_total(&f, layout)
    };

    let n = ((search.max_diameter - search.min_diameter) / search.step).floor() as usize + 1;
    let diameters: Vec<f64> = (0..n)
        .map(|k| search.min_diameter + k as f64 * search.step)
        .collect();
    let totals: Vec<f64> = diameters.par_iter().map(|&d| objective(d)).collect();
    let curve: Vec<(f64, f64)> = diameters.iter().copied().zip(totals.iter().copied()).collect();
    let unimodal = is_unimodal(&totals);

    let (lo, hi) = totals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    if hi - lo <= 1e-9 * hi.abs().max(1e-300) {
        return Ok(WaistOptimum {
            diameter: diameters[0],
            total: totals[0],
            curve,
            unimodal,
        });
    }
    let best = totals
        .iter()
        .enumerate()
        .fold(0, |b, (i, &t)| if t > totals[b] { i } else { b });
    if best == 0 || best + 1 == n {
        return Err(Error::Search(format!(
            "range [{}, {}] µm does not bracket a maximum (best at {} µm)",
            search.min_diameter, search.max_diameter, diameters[best]
        )));
    }

    let (d, t) = golden_max(&objective, diameters[best - 1], diameters[best + 1], GOLDEN_TOL);
    let (diameter, total) = if t >= totals[best] {
        (d, t)
    } else {
        (diameters[best], totals[best])
    };
    quadrant_transmission(&GaussianBeam::from_diameter(diameter), layout, cfg)?;
    Ok(WaistOptimum {
        diameter,
        total,
        curve,
        unimodal,
    })
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn is_unimodal(values: &[f64]) -> bool {
    let mut falling = false;
    for w in values.windows(2) {
        let diff = w[1] - w[0];
        let scale = w[0].abs().max(w[1].abs()) * 1e-12;
        if diff > scale {
            if falling {
                return false;
            }
        } else if diff < -scale {
            falling = true;
        }
    }
    true
}
