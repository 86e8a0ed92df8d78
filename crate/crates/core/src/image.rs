//! Raster types.
//!
//! [`DigitalImage`] is the stored, 32-bit representation that moves between
//! modules and files. [`Plane`] is the 64-bit working buffer used inside the
//! numerical pipeline, where rounding to `f32` between stages would leak into
//! subpixel refinement.

use crate::error::{Error, Result};

/// A single-channel 32-bit raster with its sampling step and blur annotation.
///
/// `delta` is the inter-pixel distance relative to the input grid (1.0 means
/// input resolution). `blur`, when set, is the Gaussian blur standard
/// deviation in input-pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalImage {
    width: usize,
    height: usize,
    samples: Vec<f32>,
    delta: f64,
    blur: Option<f64>,
}

impl DigitalImage {
    pub fn new(width: usize, height: usize, samples: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height,
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            width,
            height,
            samples,
            delta: 1.0,
            blur: None,
        })
    }

    /// Builds an image by evaluating `f(x, y)` on every pixel.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y) as f32);
            }
        }
        Self::new(width, height, samples)
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidImage(format!("delta must be positive, got {delta}")));
        }
        self.delta = delta;
        Ok(self)
    }

    pub fn with_blur(mut self, blur: Option<f64>) -> Result<Self> {
        if let Some(b) = blur {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::InvalidImage(format!("blur must be >= 0, got {b}")));
            }
        }
        self.blur = blur;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn blur(&self) -> Option<f64> {
        self.blur
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.samples[y * self.width + x]
    }

    pub fn to_plane(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.samples.iter().map(|&v| v as f64).collect(),
        }
    }

    /// Rounds a working plane to 32-bit storage.
    pub fn from_plane(plane: &Plane, delta: f64, blur: Option<f64>) -> Result<Self> {
        let samples = plane.data.iter().map(|&v| v as f32).collect();
        Self::new(plane.width, plane.height, samples)?
            .with_delta(delta)?
            .with_blur(blur)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.samples
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// 64-bit row-major working buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn transpose(&self) -> Plane {
        let mut out = Plane::zeros(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                out.data[x * self.height + y] = self.data[y * self.width + x];
            }
        }
        out
    }

    /// Keeps every `step`-th sample in both directions, starting at 0.
    pub fn decimate(&self, step: usize) -> Plane {
        let w = self.width.div_ceil(step);
        let h = self.height.div_ceil(step);
        Plane::from_fn(w, h, |x, y| self.get(x * step, y * step))
    }

    pub fn max_abs_diff(&self, other: &Plane) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Maps an arbitrary index onto `0..n` with half-sample symmetric extension
/// (`x[-1] = x[0]`, `x[n] = x[n-1]`), the symmetry of the DCT-II.
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(DigitalImage::new(0, 1, vec![]).is_err());
        assert!(DigitalImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(DigitalImage::new(1, 1, vec![f32::NAN]).is_err());
        let img = DigitalImage::constant(2, 2, 0.5).unwrap();
        assert!(img.clone().with_delta(0.0).is_err());
        assert!(img.with_blur(Some(-1.0)).is_err());
    }

    #[test]
    fn mirror_index_is_half_sample_symmetric() {
        let idx: Vec<usize> = (-3..7).map(|i| mirror_index(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(mirror_index(-1, 1), 0);
        assert_eq!(mirror_index(5, 1), 0);
    }

    #[test]
    fn decimate_keeps_origin() {
        let p = Plane::from_fn(5, 3, |x, y| (10 * y + x) as f64);
        let d = p.decimate(2);
        assert_eq!((d.width, d.height), (3, 2));
        assert_eq!(d.data, vec![0.0, 2.0, 4.0, 20.0, 22.0, 24.0]);
    }
}
