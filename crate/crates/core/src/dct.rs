//! Two-dimensional DCT-II spectra and their continuous interpolant.
//!
//! A [`DctSpectrum`] stores coefficients `a[l][k]` normalized so that the
//! image is recovered by
//!
//! ```text
//! u(x, y) = sum_l sum_k a[l][k] cos(pi k (x + 1/2) / W) cos(pi l (y + 1/2) / H)
//! ```
//!
//! at integer pixel positions. The same series, evaluated at arbitrary real
//! `(x, y)`, is the DCT interpolant of the image (its even-symmetric,
//! `2W x 2H`-periodic extension). Gaussian filtering multiplies `a[l][k]` by
//! `exp(-sigma^2 (xi^2 + eta^2) / 2)` with `xi = pi k / W`, `eta = pi l / H`,
//! which is the exact continuous convolution of that interpolant.

use std::f64::consts::PI;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

use crate::image::Plane;
use crate::parallel;

/// Coefficients below this fraction of the largest magnitude are skipped when
/// the series is evaluated off-grid.
const SAMPLE_CUTOFF: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq)]
pub struct DctSpectrum {
    width: usize,
    height: usize,
    coeffs: Vec<f64>,
}

fn dct2_rows(data: &mut [f64], width: usize, plan: &Arc<dyn TransformType2And3<f64>>) {
    let scratch_len = plan.get_scratch_len();
    parallel::rows_for_each_init(
        data,
        width,
        || vec![0.0; scratch_len],
        |scratch, _, row| plan.process_dct2_with_scratch(row, scratch),
    );
}

fn dct3_rows(data: &mut [f64], width: usize, plan: &Arc<dyn TransformType2And3<f64>>) {
    let scratch_len = plan.get_scratch_len();
    parallel::rows_for_each_init(
        data,
        width,
        || vec![0.0; scratch_len],
        |scratch, _, row| {
            row[0] *= 2.0;
            plan.process_dct3_with_scratch(row, scratch)
        },
    );
}

impl DctSpectrum {
    pub fn forward(plane: &Plane) -> Self {
        let (w, h) = (plane.width, plane.height);
        let mut planner = DctPlanner::new();
        let mut rows = plane.clone();
        dct2_rows(&mut rows.data, w, &planner.plan_dct2(w));
        let mut cols = rows.transpose();
        dct2_rows(&mut cols.data, h, &planner.plan_dct2(h));
        // cols is indexed [k][l]; normalize while transposing back to [l][k].
        let mut coeffs = vec![0.0; w * h];
        for k in 0..w {
            let ck = if k == 0 { 1.0 } else { 2.0 } / w as f64;
            for l in 0..h {
                let cl = if l == 0 { 1.0 } else { 2.0 } / h as f64;
                coeffs[l * w + k] = cols.data[k * h + l] * ck * cl;
            }
        }
        Self {
            width: w,
            height: h,
            coeffs,
        }
    }

    /// Evaluates the series on the pixel grid.
    pub fn inverse(&self) -> Plane {
        let (w, h) = (self.width, self.height);
        let mut planner = DctPlanner::new();
        let spec = Plane {
            width: w,
            height: h,
            data: self.coeffs.clone(),
        };
        let mut cols = spec.transpose();
        dct3_rows(&mut cols.data, h, &planner.plan_dct3(h));
        let mut rows = cols.transpose();
        dct3_rows(&mut rows.data, w, &planner.plan_dct3(w));
        rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coeff(&self, k: usize, l: usize) -> f64 {
        self.coeffs[l * self.width + k]
    }

    /// Multiplies by the Fourier transform of a Gaussian of standard
    /// deviation `sigma` (in pixels of this grid).
    pub fn gaussian(&self, sigma: f64) -> Self {
        let mut out = self.clone();
        out.apply_gaussian(sigma);
        out
    }

    pub fn apply_gaussian(&mut self, sigma: f64) {
        if sigma == 0.0 {
            return;
        }
        let gx = gaussian_multipliers(self.width, sigma);
        let gy = gaussian_multipliers(self.height, sigma);
        for (l, row) in self.coeffs.chunks_mut(self.width).enumerate() {
            for (k, a) in row.iter_mut().enumerate() {
                *a *= gx[k] * gy[l];
            }
        }
    }

    /// Evaluates the interpolant on the separable grid `xs x ys` (pixel
    /// coordinates of this spectrum's grid). Output is `ys.len()` rows of
    /// `xs.len()` samples.
    pub fn sample(&self, xs: &[f64], ys: &[f64]) -> Plane {
        let (w, h) = (self.width, self.height);
        let peak = self.coeffs.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let thr = peak * SAMPLE_CUTOFF;
        let mut kx = 0;
        let mut ky = 0;
        for l in 0..h {
            for k in 0..w {
                if self.coeffs[l * w + k].abs() > thr {
                    kx = kx.max(k + 1);
                    ky = ky.max(l + 1);
                }
            }
        }
        let nx = xs.len();
        let ny = ys.len();
        if kx == 0 {
            return Plane::zeros(nx, ny);
        }
        let cos_x: Vec<f64> = xs
            .iter()
            .flat_map(|&x| (0..kx).map(move |k| (PI * k as f64 * (x + 0.5) / w as f64).cos()))
            .collect();
        // partial[l][i] = sum_k a[l][k] cos_x[i][k]
        let partial: Vec<Vec<f64>> = parallel::map_range(ky, |l| {
            let row = &self.coeffs[l * w..l * w + kx];
            (0..nx)
                .map(|i| {
                    let c = &cos_x[i * kx..(i + 1) * kx];
                    row.iter().zip(c).map(|(a, b)| a * b).sum()
                })
                .collect()
        });
        let rows: Vec<Vec<f64>> = parallel::map(ys, |&y| {
            let mut out = vec![0.0; nx];
            for (l, p) in partial.iter().enumerate() {
                let c = (PI * l as f64 * (y + 0.5) / h as f64).cos();
                for (o, v) in out.iter_mut().zip(p) {
                    *o += c * v;
                }
            }
            out
        });
        Plane {
            width: nx,
            height: ny,
            data: rows.into_iter().flatten().collect(),
        }
    }
}

fn gaussian_multipliers(n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let xi = PI * k as f64 / n as f64;
            (-0.5 * sigma * sigma * xi * xi).exp()
        })
        .collect()
}

/// Exact Gaussian convolution of the DCT interpolant, `sigma` in grid pixels.
pub fn gaussian_convolve_plane(plane: &Plane, sigma: f64) -> Plane {
    DctSpectrum::forward(plane).gaussian(sigma).inverse()
}
