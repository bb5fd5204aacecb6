use serde::{Deserialize, Serialize};
use libm::{erf, erfc};
use std::f64::consts::SQRT_2;

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]` (µm). Bounds may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn centered_square(cx: f64, cy: f64, side: f64) -> Self {
        let h = side / 2.0;
        Rect {
            x0: cx - h,
            x1: cx + h,
            y0: cy - h,
            y1: cy + h,
        }
    }
}

/// Probability that a normal variable N(mu, sigma^2) falls in `[a, b]`.
///
/// Evaluated with erfc on the tail side so that intervals far from the mean
/// keep their relative precision.
pub fn gaussian_interval_mass(a: f64, b: f64, mu: f64, sigma: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let za = (a - mu) / (sigma * SQRT_2);
    let zb = (b - mu) / (sigma * SQRT_2);
    let m = if za >= 0.0 {
        0.5 * (erfc(za) - erfc(zb))
    } else if zb <= 0.0 {
        0.5 * (erfc(-zb) - erfc(-za))
    } else {
        0.5 * (erf(zb) - erf(za))
    };
    m.max(0.0)
}

/// Length of `[a0, a1] ∩ [b0, b1]`.
pub(crate) fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_masses() {
        let one_sigma = gaussian_interval_mass(-1.0, 1.0, 0.0, 1.0);
        assert!((one_sigma - 0.682_689_492_137_085_9).abs() < 1e-14, "{one_sigma}");
        assert_eq!(gaussian_interval_mass(1.0, 1.0, 0.0, 1.0), 0.0);
        assert!((gaussian_interval_mass(f64::NEG_INFINITY, f64::INFINITY, 3.0, 2.0) - 1.0).abs() < 1e-15);
        // far tail keeps relative precision
        let tail = gaussian_interval_mass(10.0, f64::INFINITY, 0.0, 1.0);
        assert!((tail / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-10);
    }
}
