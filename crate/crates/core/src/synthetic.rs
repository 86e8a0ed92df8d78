//! Deterministic synthetic reference images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_param, Result};
use crate::image::{DigitalImage, Plane};

/// Dead-leaves model: opaque disks with power-law radii stacked in random
/// order, edges anti-aliased over one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeadLeaves {
    pub width: usize,
    pub height: usize,
    pub disks: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Exponent of the radius density `r^-alpha`.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for DeadLeaves {
    fn default() -> Self {
        Self {
            width: 1024,
            height: 1024,
            disks: 3000,
            r_min: 12.0,
            r_max: 160.0,
            alpha: 3.0,
            seed: 7,
        }
    }
}

/// Blur annotation of a rendered reference, in its own pixels.
pub const REFERENCE_BLUR: f64 = 0.5;

impl DeadLeaves {
    pub fn render(&self) -> Result<DigitalImage> {
        ensure_param!(self.width >= 1 && self.height >= 1, "empty reference");
        ensure_param!(
            self.r_min > 0.0 && self.r_max >= self.r_min,
            "radii must satisfy 0 < r_min <= r_max"
        );
        ensure_param!(self.alpha > 1.0, "alpha must be > 1, got {}", self.alpha);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (w, h) = (self.width, self.height);
        let mut plane = Plane::from_fn(w, h, |_, _| 0.5);
        let e = 1.0 - self.alpha;
        let (a, b) = (self.r_min.powf(e), self.r_max.powf(e));
        for _ in 0..self.disks {
            let cx = rng.gen_range(-self.r_max..w as f64 + self.r_max);
            let cy = rng.gen_range(-self.r_max..h as f64 + self.r_max);
            let r = (a + rng.gen::<f64>() * (b - a)).powf(1.0 / e);
            let gray = rng.gen_range(0.1..0.9);
            let x0 = (cx - r - 1.0).floor().max(0.0) as usize;
            let x1 = ((cx + r + 1.0).ceil().max(0.0) as usize).min(w);
            let y0 = (cy - r - 1.0).floor().max(0.0) as usize;
            let y1 = ((cy + r + 1.0).ceil().max(0.0) as usize).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = (x as f64 - cx).hypot(y as f64 - cy);
                    let cover = (r - d + 0.5).clamp(0.0, 1.0);
                    if cover > 0.0 {
                        let v = plane.get(x, y);
                        plane.set(x, y, v + cover * (gray - v));
                    }
                }
            }
        }
        DigitalImage::from_plane(&plane, 1.0, Some(REFERENCE_BLUR))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let cfg = DeadLeaves {
            width: 64,
            height: 48,
            disks: 50,
            r_min: 3.0,
            r_max: 20.0,
            ..DeadLeaves::default()
        };
        let a = cfg.render().unwrap();
        let b = cfg.render().unwrap();
        assert_eq!(a, b);
        let (lo, hi) = a.min_max();
        assert!(lo >= 0.1 - 1e-6 && hi <= 0.9 + 1e-6);
        assert!(hi - lo > 0.2);
        let c = DeadLeaves { seed: 8, ..cfg }.render().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_radii_rejected() {
        let cfg = DeadLeaves {
            r_min: 5.0,
            r_max: 1.0,
            ..DeadLeaves::default()
        };
        assert!(cfg.render().is_err());
    }
}
