//! Cubic B-spline interpolation used to oversample the input image.
//!
//! The interpolating prefilter and the evaluation both use the half-sample
//! symmetric extension of the signal, the same symmetry as the DCT-II used by
//! the convolution stage.

use crate::error::{ensure_param, Result};
use crate::image::{mirror_index, DigitalImage, Plane};
use crate::parallel;

/// Boundary extension used by the prefilter and the evaluation.
pub const BOUNDARY: &str = "half-sample-symmetric";

const POLE: f64 = -0.267_949_192_431_122_7; // sqrt(3) - 2

/// Cubic B-spline interpolation coefficients of a 1D signal under
/// half-sample symmetric extension.
///
/// The extension is periodic with period `2n`, so both recursive filters are
/// initialized with their exact periodic steady state.
pub fn prefilter(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n == 1 {
        return signal.to_vec();
    }
    let period = 2 * n;
    let ext: Vec<f64> = (0..period).map(|i| signal[mirror_index(i as isize, n)]).collect();
    let z = POLE;
    let zp = z.powi(period as i32);

    // causal: c+[k] = s[k] + z c+[k-1]
    let mut acc = 0.0;
    let mut zk = 1.0;
    for j in 0..period {
        acc += zk * ext[(period - j) % period];
        zk *= z;
    }
    let mut cplus = vec![0.0; period];
    cplus[0] = acc / (1.0 - zp);
    for k in 1..period {
        cplus[k] = ext[k] + z * cplus[k - 1];
    }

    // anticausal: c-[k] = z (c-[k+1] - c+[k])
    let mut acc = 0.0;
    let mut zk = 1.0;
    for j in 0..period {
        acc += zk * cplus[(period - 1 + j) % period];
        zk *= z;
    }
    let mut cminus = vec![0.0; period];
    cminus[period - 1] = -z * acc / (1.0 - zp);
    for k in (0..period - 1).rev() {
        cminus[k] = z * (cminus[k + 1] - cplus[k]);
    }
    cminus[..n].iter().map(|c| 6.0 * c).collect()
}

#[inline]
fn bspline3(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

/// Evaluates the spline with coefficients `coeffs` at position `x`.
#[inline]
pub fn evaluate(coeffs: &[f64], x: f64) -> f64 {
    let n = coeffs.len();
    let base = x.floor() as isize;
    let mut v = 0.0;
    for i in base - 1..=base + 2 {
        v += coeffs[mirror_index(i, n)] * bspline3(x - i as f64);
    }
    v
}

/// Number of output samples when resampling `n` samples with step `step`.
pub fn resampled_len(n: usize, step: f64) -> usize {
    // tolerance absorbs 1/step round-off, e.g. step = 1/3
    ((n as f64 / step) - 1e-9).ceil().max(1.0) as usize
}

/// Resamples a plane at positions `j * step` in both directions.
pub fn resample_plane(plane: &Plane, step: f64) -> Plane {
    let (w, h) = (plane.width, plane.height);
    let ow = resampled_len(w, step);
    let oh = resampled_len(h, step);
    let xs: Vec<f64> = (0..ow).map(|j| j as f64 * step).collect();
    // rows: prefilter + evaluate along x
    let rows: Vec<Vec<f64>> = parallel::map_range(h, |y| {
        let c = prefilter(&plane.data[y * w..(y + 1) * w]);
        xs.iter().map(|&x| evaluate(&c, x)).collect()
    });
    // columns
    let cols: Vec<Vec<f64>> = parallel::map_range(ow, |x| {
        let col: Vec<f64> = rows.iter().map(|r| r[x]).collect();
        let c = prefilter(&col);
        (0..oh).map(|j| evaluate(&c, j as f64 * step)).collect()
    });
    Plane::from_fn(ow, oh, |x, y| cols[x][y])
}

/// Oversamples `image` by `factor` with cubic B-spline interpolation.
///
/// The output grid step is `image.delta() / factor`. The blur annotation is
/// carried over unchanged since it is expressed in input-pixel units.
pub fn oversample_bspline3(image: &DigitalImage, factor: f64) -> Result<DigitalImage> {
    ensure_param!(
        factor > 1.0 && factor.is_finite(),
        "oversampling factor must be > 1, got {factor}"
    );
    let out = resample_plane(&image.to_plane(), 1.0 / factor);
    DigitalImage::from_plane(&out, image.delta() / factor, image.blur())
}
