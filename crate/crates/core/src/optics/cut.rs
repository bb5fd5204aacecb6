use serde::{Deserialize, Serialize};

use super::{GaussianBeam, QuadrantLayout, Rect};
use crate::error::{Error, Result};
use crate::source::{CoherenceGrid, TwinBeamMoments};

/// Moments of one quadrant of the twin beams after cutting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutResult {
    pub moments: TwinBeamMoments,
    /// Power fractions of probe and conjugate inside the window.
    pub contained_p: f64,
    pub contained_c: f64,
    /// Share of the quadrant's power carried by cells crossing the window
    /// boundary. These cells lose their covariance.
    pub straddle_fraction: f64,
}

/// Selects quadrant `q` of both beams through the window footprint.
///
/// Cells are independent, so means and variances of the selected part scale
/// with the contained power fraction. Covariance survives only in cells lying
/// entirely inside the window, each weighted by `sqrt(w_p w_c)`.
pub fn quadrant_cut(
    m: &TwinBeamMoments,
    grid: &CoherenceGrid,
    layout: &QuadrantLayout,
    q: usize,
) -> Result<CutResult> {
    let rect = checked_rect(m, layout, q)?;
    let (bp, bc) = grid.beams();
    let overlap = grid.inside_overlap(0, rect.x0, rect.x1) * grid.inside_overlap(1, rect.y0, rect.y1);
    finish(m, bp, bc, &rect, q, overlap)
}

/// Limit of [`quadrant_cut`] for a vanishing coherence area: no cell
/// straddles, and the covariance weight is the overlap integral
/// `∫ sqrt(I_p I_c)` over the window. Both beams must share a center.
pub fn quadrant_cut_continuum(
    m: &TwinBeamMoments,
    beam_p: &GaussianBeam,
    beam_c: &GaussianBeam,
    layout: &QuadrantLayout,
    q: usize,
) -> Result<CutResult> {
    let rect = checked_rect(m, layout, q)?;
    beam_p.validate().map_err(|e| e.within("beam_p"))?;
    beam_c.validate().map_err(|e| e.within("beam_c"))?;
    if beam_p.center != beam_c.center {
        return Err(Error::validation(
            "beam_c.center",
            "continuum cut needs coincident probe and conjugate centers",
        ));
    }
    // sqrt(N(x; sp) N(x; sc)) = N(x; se) * se / sqrt(sp sc), 2/se^2 = 1/sp^2 + 1/sc^2
    let axis = |sp: f64, sc: f64, mu: f64, lo: f64, hi: f64| {
        let se = (2.0 / (1.0 / (sp * sp) + 1.0 / (sc * sc))).sqrt();
        se / (sp * sc).sqrt() * super::gaussian_interval_mass(lo, hi, mu, se)
    };
    let overlap = axis(beam_p.sigma_x, beam_c.sigma_x, beam_p.center.0, rect.x0, rect.x1)
        * axis(beam_p.sigma_y, beam_c.sigma_y, beam_p.center.1, rect.y0, rect.y1);
    finish(m, beam_p, beam_c, &rect, q, overlap)
}

fn checked_rect(m: &TwinBeamMoments, layout: &QuadrantLayout, q: usize) -> Result<Rect> {
    m.validate()?;
    layout.validate()?;
    if q >= 4 {
        return Err(Error::validation("quadrant", format!("{q} is not in 0..4")));
    }
    Ok(layout.window_rect(q))
}

fn finish(
    m: &TwinBeamMoments,
    bp: &GaussianBeam,
    bc: &GaussianBeam,
    rect: &Rect,
    q: usize,
    overlap: f64,
) -> Result<CutResult> {
    let fp = bp.mass(rect);
    let fc = bc.mass(rect);
    if fp <= 0.0 || fc <= 0.0 {
        return Err(Error::EmptyQuadrant(q));
    }
    let full = (fp * fc).sqrt();
    let overlap = overlap.min(full);
    Ok(CutResult {
        moments: TwinBeamMoments {
            mean_p: fp * m.mean_p,
            mean_c: fc * m.mean_c,
            var_p: fp * m.var_p,
            var_c: fc * m.var_c,
            cov: overlap * m.cov,
        },
        contained_p: fp,
        contained_c: fc,
        straddle_fraction: (1.0 - overlap / full).max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{build_coherence_grid, fwm_moments, source_squeezing, FwmSourceParams};
    use proptest::prelude::*;

    fn source() -> TwinBeamMoments {
        fwm_moments(&FwmSourceParams::ideal(2.14, 1.0)).unwrap()
    }

    fn balanced_db(m: &TwinBeamMoments) -> f64 {
        source_squeezing(m).unwrap().db
    }

    #[test]
    fn vanishing_cells_keep_squeezing() {
        let m = source();
        let beam = GaussianBeam::from_diameter(360.0);
        let razor = QuadrantLayout::razor_blades();
        let cont = quadrant_cut_continuum(&m, &beam, &beam, &razor, 0).unwrap();
        assert!((cont.contained_p - 0.25).abs() < 1e-15);
        assert!(cont.straddle_fraction < 1e-12);
        assert!((balanced_db(&cont.moments) - balanced_db(&m)).abs() < 1e-9);

        let grid = build_coherence_grid(360.0, 360.0, 0.05, 2160.0).unwrap();
        let fine = quadrant_cut(&m, &grid, &razor, 0).unwrap();
        assert!(fine.straddle_fraction < 1e-3);
        assert!((balanced_db(&fine.moments) - balanced_db(&m)).abs() < 0.05);
    }

    #[test]
    fn interior_cell_is_pure_loss() {
        let m = source();
        let mut beam = GaussianBeam::from_diameter(8.0);
        beam.center = (80.0, 80.0);
        let grid = CoherenceGrid::new(beam, beam, 40.0, 400.0).unwrap();
        let r = quadrant_cut(&m, &grid, &QuadrantLayout::razor_blades(), 0).unwrap();
        assert!(r.straddle_fraction < 1e-12);
        assert!((r.contained_p - 1.0).abs() < 1e-12);
        assert!((balanced_db(&r.moments) - balanced_db(&m)).abs() < 1e-9);
    }

    #[test]
    fn empty_quadrant_is_an_error() {
        let m = source();
        let mut beam = GaussianBeam::from_diameter(8.0);
        beam.center = (-300.0, -300.0);
        let grid = CoherenceGrid::new(beam, beam, 40.0, 800.0).unwrap();
        assert!(matches!(
            quadrant_cut(&m, &grid, &QuadrantLayout::razor_blades(), 0),
            Err(Error::EmptyQuadrant(0))
        ));
    }

    #[test]
    fn quadrants_agree_for_centered_beam() {
        let m = source();
        let grid = build_coherence_grid(360.0, 360.0, 20.0, 2160.0).unwrap();
        let layout = QuadrantLayout::sensor_array();
        let r: Vec<_> = (0..4).map(|q| quadrant_cut(&m, &grid, &layout, q).unwrap()).collect();
        for x in &r[1..] {
            assert!((x.moments.cov - r[0].moments.cov).abs() < 1e-12);
            assert!((x.contained_p - r[0].contained_p).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn degradation_grows_with_cell_size(d1 in 1.0..120.0f64, k in 1.05..3.0f64) {
            let m = source();
            let razor = QuadrantLayout::razor_blades();
            let small = build_coherence_grid(360.0, 360.0, d1, 2160.0).unwrap();
            let large = build_coherence_grid(360.0, 360.0, d1 * k, 2160.0).unwrap();
            let a = quadrant_cut(&m, &small, &razor, 0).unwrap();
            let b = quadrant_cut(&m, &large, &razor, 0).unwrap();
            prop_assert!(b.straddle_fraction >= a.straddle_fraction - 1e-12);
            prop_assert!(balanced_db(&b.moments) >= balanced_db(&a.moments) - 1e-12);
        }
    }
}
