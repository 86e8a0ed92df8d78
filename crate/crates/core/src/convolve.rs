//! Gaussian convolution: the exact DCT-domain filter and the sampled-kernel
//! baseline it replaces.

use std::str::FromStr;

use crate::blobfit::{estimate_blob_sigma, gaussian_blob};
use crate::dct::gaussian_convolve_plane;
use crate::error::{ensure_param, Error, Result};
use crate::image::{mirror_index, DigitalImage, Plane};

/// Default kernel half-width, in standard deviations, of the sampled kernel.
pub const DEFAULT_TRUNCATION: f64 = 4.0;

fn combined_blur(image: &DigitalImage, sigma_grid: f64) -> Option<f64> {
    image
        .blur()
        .map(|b| (b * b + (sigma_grid * image.delta()).powi(2)).sqrt())
}

/// Convolves the DCT interpolant of `image` with a Gaussian of standard
/// deviation `sigma`, expressed in pixels of the image's own grid.
pub fn dct_gaussian_convolve(image: &DigitalImage, sigma: f64) -> Result<DigitalImage> {
    ensure_param!(sigma >= 0.0 && sigma.is_finite(), "sigma must be >= 0, got {sigma}");
    let out = gaussian_convolve_plane(&image.to_plane(), sigma);
    DigitalImage::from_plane(&out, image.delta(), combined_blur(image, sigma))
}

/// Normalized sampled Gaussian with radius `ceil(truncation * sigma)`.
pub fn sampled_kernel(sigma: f64, truncation: f64) -> Vec<f64> {
    let radius = (truncation * sigma).ceil() as isize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 * inv).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

fn convolve_rows(plane: &Plane, kernel: &[f64]) -> Plane {
    let r = (kernel.len() / 2) as isize;
    let w = plane.width;
    Plane::from_fn(w, plane.height, |x, y| {
        let row = &plane.data[y * w..(y + 1) * w];
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * row[mirror_index(x as isize + i as isize - r, w)])
            .sum()
    })
}

/// Separable discrete convolution with a sampled, truncated, renormalized
/// Gaussian kernel and mirror boundaries.
pub fn sampled_kernel_convolve(
    image: &DigitalImage,
    sigma: f64,
    truncation: f64,
) -> Result<DigitalImage> {
    ensure_param!(sigma > 0.0 && sigma.is_finite(), "sigma must be > 0, got {sigma}");
    ensure_param!(truncation > 0.0, "truncation must be > 0, got {truncation}");
    let kernel = sampled_kernel(sigma, truncation);
    let rows = convolve_rows(&image.to_plane(), &kernel);
    let out = convolve_rows(&rows.transpose(), &kernel).transpose();
    DigitalImage::from_plane(&out, image.delta(), combined_blur(image, sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvolutionMethod {
    Dct,
    Sampled,
}

impl FromStr for ConvolutionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dct" => Ok(Self::Dct),
            "sampled" => Ok(Self::Sampled),
            other => Err(Error::Config(format!("unknown convolution method {other:?}"))),
        }
    }
}

impl ConvolutionMethod {
    pub fn apply(self, image: &DigitalImage, sigma: f64) -> Result<DigitalImage> {
        match self {
            Self::Dct => dct_gaussian_convolve(image, sigma),
            Self::Sampled => sampled_kernel_convolve(image, sigma, DEFAULT_TRUNCATION),
        }
    }
}

/// Outcome of one iterated-filtering run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemigroupRun {
    pub expected: f64,
    pub fitted: f64,
    pub relative_error: f64,
}

/// Filters a sampled blob of standard deviation `c` `n_iter` times with a
/// Gaussian of standard deviation `sigma` and measures how far the fitted
/// blur lands from `sqrt(c^2 + n_iter sigma^2)`.
pub fn semigroup_run(
    c: f64,
    sigma: f64,
    n_iter: usize,
    method: ConvolutionMethod,
) -> Result<SemigroupRun> {
    ensure_param!(c > 0.0, "blob blur must be > 0, got {c}");
    let expected = (c * c + n_iter as f64 * sigma * sigma).sqrt();
    // 6 sigma of margin on each side keeps the mirrored tails below 1e-8.
    let size = ((12.0 * expected).ceil() as usize).max(64) | 1;
    let center = (size / 2) as f64;
    let blob = gaussian_blob(size, size, center, center, c, 1.0);
    let mut img = DigitalImage::from_plane(&blob, 1.0, Some(c))?;
    for _ in 0..n_iter {
        img = method.apply(&img, sigma)?;
    }
    let fitted = estimate_blob_sigma(&img)?;
    Ok(SemigroupRun {
        expected,
        fitted,
        relative_error: (fitted - expected).abs() / expected,
    })
}

pub fn semigroup_deviation(
    c: f64,
    sigma: f64,
    n_iter: usize,
    method: ConvolutionMethod,
) -> Result<f64> {
    semigroup_run(c, sigma, n_iter, method).map(|r| r.relative_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_image() -> DigitalImage {
        DigitalImage::from_fn(23, 17, |x, y| {
            0.5 + 0.3 * ((x as f64) * 0.7).sin() * ((y as f64) * 0.4).cos()
        })
        .unwrap()
        .with_blur(Some(0.5))
        .unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = ramp_image();
        let out = dct_gaussian_convolve(&img, 0.0).unwrap();
        let diff = img
            .samples()
            .iter()
            .zip(out.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff <= 1e-6);
    }

    #[test]
    fn blur_annotation_combines_in_quadrature() {
        let out = dct_gaussian_convolve(&ramp_image(), 1.2).unwrap();
        assert!((out.blur().unwrap() - (0.25f64 + 1.44).sqrt()).abs() < 1e-12);
        let half = ramp_image().with_delta(0.5).unwrap();
        let out = dct_gaussian_convolve(&half, 1.2).unwrap();
        assert!((out.blur().unwrap() - (0.25f64 + 0.36).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constants_are_preserved() {
        let img = DigitalImage::constant(12, 9, 0.42).unwrap();
        for s in [0.3, 2.0, 7.5] {
            let a = dct_gaussian_convolve(&img, s).unwrap();
            assert!(a.samples().iter().all(|v| (v - 0.42).abs() < 1e-6));
        }
        let b = sampled_kernel_convolve(&img, 2.0, DEFAULT_TRUNCATION).unwrap();
        assert!(b.samples().iter().all(|v| (v - 0.42).abs() < 1e-6));
    }

    #[test]
    fn parameter_errors() {
        let img = ramp_image();
        assert!(dct_gaussian_convolve(&img, -0.1).is_err());
        assert!(sampled_kernel_convolve(&img, 0.0, 4.0).is_err());
        assert!("fft".parse::<ConvolutionMethod>().is_err());
    }

    #[test]
    fn kernel_radius_and_normalization() {
        let k = sampled_kernel(0.5, 4.0);
        assert_eq!(k.len(), 5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn filtering_stays_within_range() {
        let img = ramp_image();
        let (lo, hi) = img.min_max();
        for s in [0.2, 1.0, 3.0] {
            let (a, b) = dct_gaussian_convolve(&img, s).unwrap().min_max();
            assert!(a >= lo - 1e-6 && b <= hi + 1e-6);
        }
    }
}
