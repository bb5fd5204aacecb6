use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::optics::{gaussian_interval_mass, GaussianBeam};

/// One coherence area: an independently correlated probe/conjugate sub-region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub center: (f64, f64),
    pub weight_p: f64,
    pub weight_c: f64,
}

/// Square cells of side `cell_size` tiling the sensing plane, one cell
/// centered on the beam axis. Corresponding probe and conjugate cells share
/// centers (near-field imaging).
///
/// Cells are the Cartesian product of identical row and column intervals and
/// both beams are axis-aligned Gaussians, so every cell weight is a product of
/// a column mass and a row mass. Only the per-axis factors are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceGrid {
    cell_size: f64,
    centers: Vec<f64>,
    beam_p: GaussianBeam,
    beam_c: GaussianBeam,
    px: Vec<f64>,
    py: Vec<f64>,
    cx: Vec<f64>,
    cy: Vec<f64>,
}

/// Builds the grid for two centered round beams with 1/e^2 diameters
/// `waist_p`, `waist_c` (µm) over a square of side `extent` (µm).
pub fn build_coherence_grid(
    waist_p: f64,
    waist_c: f64,
    cell_size: f64,
    extent: f64,
) -> Result<CoherenceGrid> {
    ensure(waist_p.is_finite() && waist_p > 0.0, "waist_p", || {
        format!("must be > 0, got {waist_p}")
    })?;
    ensure(waist_c.is_finite() && waist_c > 0.0, "waist_c", || {
        format!("must be > 0, got {waist_c}")
    })?;
    CoherenceGrid::new(
        GaussianBeam::from_diameter(waist_p),
        GaussianBeam::from_diameter(waist_c),
        cell_size,
        extent,
    )
}

impl CoherenceGrid {
    /// Grid centered on the origin for arbitrary beams. The extent must cover
    /// four 1/e^2 diameters of the wider beam.
    pub fn new(
        beam_p: GaussianBeam,
        beam_c: GaussianBeam,
        cell_size: f64,
        extent: f64,
    ) -> Result<Self> {
        beam_p.validate().map_err(|e| e.within("beam_p"))?;
        beam_c.validate().map_err(|e| e.within("beam_c"))?;
        ensure(cell_size.is_finite() && cell_size > 0.0, "cell_size", || {
            format!("must be > 0, got {cell_size}")
        })?;
        ensure(extent.is_finite() && cell_size <= extent, "extent", || {
            format!("cell size {cell_size} exceeds extent {extent}")
        })?;
        let widest = 4.0 * [beam_p.sigma_x, beam_p.sigma_y, beam_c.sigma_x, beam_c.sigma_y]
            .into_iter()
            .fold(0.0, f64::max);
        ensure(extent >= 4.0 * widest * (1.0 - 1e-12), "extent", || {
            format!("{extent} µm covers fewer than 4 beam diameters")
        })?;

        let half_cells = ((extent / 2.0 - cell_size / 2.0) / cell_size).ceil().max(0.0) as usize;
        let centers: Vec<f64> = (0..2 * half_cells + 1)
            .map(|k| (k as f64 - half_cells as f64) * cell_size)
            .collect();
        let masses = |center: f64, sigma: f64| -> Vec<f64> {
            centers
                .iter()
                .map(|&c| {
                    gaussian_interval_mass(c - cell_size / 2.0, c + cell_size / 2.0, center, sigma)
                })
                .collect()
        };
        Ok(Self {
            cell_size,
            px: masses(beam_p.center.0, beam_p.sigma_x),
            py: masses(beam_p.center.1, beam_p.sigma_y),
            cx: masses(beam_c.center.0, beam_c.sigma_x),
            cy: masses(beam_c.center.1, beam_c.sigma_y),
            centers,
            beam_p,
            beam_c,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    /// Cells per side.
    pub fn side(&self) -> usize {
        self.centers.len()
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn beams(&self) -> (&GaussianBeam, &GaussianBeam) {
        (&self.beam_p, &self.beam_c)
    }

    /// Cell-center coordinates along one axis.
    pub fn axis_centers(&self) -> &[f64] {
        &self.centers
    }

    /// Cell `(column i, row j)`.
    pub fn cell(&self, i: usize, j: usize) -> Cell {
        Cell {
            center: (self.centers[i], self.centers[j]),
            weight_p: self.px[i] * self.py[j],
            weight_c: self.cx[i] * self.cy[j],
        }
    }

    /// Cells in row-major order (row j outer, column i inner).
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let n = self.side();
        (0..n).flat_map(move |j| (0..n).map(move |i| self.cell(i, j)))
    }

    pub fn total_weights(&self) -> (f64, f64) {
        let s = |v: &[f64]| v.iter().sum::<f64>();
        (s(&self.px) * s(&self.py), s(&self.cx) * s(&self.cy))
    }

    /// Bounds `[lo, hi]` of column/row interval `k`.
    pub(crate) fn interval(&self, k: usize) -> (f64, f64) {
        let h = self.cell_size / 2.0;
        (self.centers[k] - h, self.centers[k] + h)
    }

    /// Sum over columns (`axis = 0`) or rows (`axis = 1`) lying entirely in
    /// `[lo, hi]` of `sqrt(w_p w_c)` for the per-axis masses.
    pub(crate) fn inside_overlap(&self, axis: usize, lo: f64, hi: f64) -> f64 {
        let (p, c) = if axis == 0 { (&self.px, &self.cx) } else { (&self.py, &self.cy) };
        let tol = 1e-9 * self.cell_size;
        (0..self.side())
            .filter(|&k| {
                let (a, b) = self.interval(k);
                a >= lo - tol && b <= hi + tol
            })
            .map(|k| (p[k] * c[k]).sqrt())
            .sum()
    }
}
