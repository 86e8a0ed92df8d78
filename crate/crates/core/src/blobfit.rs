//! Least-squares fit of an isotropic Gaussian blob, used as the blur oracle.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::image::{DigitalImage, Plane};

const MAX_ITERATIONS: usize = 200;
const REL_TOLERANCE: f64 = 1e-8;

/// Parameters of `amplitude * exp(-((x-cx)^2 + (y-cy)^2) / (2 sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobFit {
    pub amplitude: f64,
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
    pub iterations: usize,
}

/// Standard deviation, in pixels of the image grid, of the best-fit
/// isotropic Gaussian.
pub fn estimate_blob_sigma(image: &DigitalImage) -> Result<f64> {
    fit_blob(&image.to_plane()).map(|f| f.sigma)
}

/// Levenberg-Marquardt fit with free amplitude, center and width, started
/// from the intensity-weighted second moments.
pub fn fit_blob(plane: &Plane) -> Result<BlobFit> {
    let mut p = moment_start(plane)?;
    let mut cost = residual_cost(plane, &p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(plane, &p);
        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for i in 0..4 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let cand = p + step;
            let c = residual_cost(plane, &cand);
            if c.is_finite() && c <= cost {
                let rel = (0..4)
                    .map(|i| step[i].abs() / cand[i].abs().max(1.0))
                    .fold(0.0, f64::max);
                p = cand;
                cost = c;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if rel < REL_TOLERANCE {
                    return finish(p, iterations);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left: at a minimum up to round-off
            return finish(p, iterations);
        }
    }
    finish(p, iterations)
}

fn finish(p: Vector4<f64>, iterations: usize) -> Result<BlobFit> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("blob fit diverged".into()));
    }
    Ok(BlobFit {
        amplitude: p[0],
        cx: p[1],
        cy: p[2],
        sigma: p[3].abs(),
        iterations,
    })
}

fn moment_start(plane: &Plane) -> Result<Vector4<f64>> {
    let (lo, hi) = plane
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let sign = if hi.abs() >= lo.abs() { 1.0 } else { -1.0 };
    let (mut m0, mut mx, mut my) = (0.0, 0.0, 0.0);
    for y in 0..plane.height {
        for x in 0..plane.width {
            let w = (sign * plane.get(x, y)).max(0.0);
            m0 += w;
            mx += w * x as f64;
            my += w * y as f64;
        }
    }
    if !(m0 > 0.0) || !m0.is_finite() {
        return Err(Error::Numerical("blob fit: image has no positive mass".into()));
    }
    let (cx, cy) = (mx / m0, my / m0);
    let mut m2 = 0.0;
    for y in 0..plane.height {
        for x in 0..plane.width {
            let w = (sign * plane.get(x, y)).max(0.0);
            m2 += w * ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2));
        }
    }
    let sigma = (m2 / (2.0 * m0)).sqrt().max(0.5);
    let amp = if sign > 0.0 { hi } else { lo };
    Ok(Vector4::new(amp, cx, cy, sigma))
}

fn residual_cost(plane: &Plane, p: &Vector4<f64>) -> f64 {
    let inv = 1.0 / (2.0 * p[3] * p[3]);
    let mut c = 0.0;
    for y in 0..plane.height {
        let dy2 = (y as f64 - p[2]).powi(2);
        for x in 0..plane.width {
            let r2 = (x as f64 - p[1]).powi(2) + dy2;
            let r = plane.get(x, y) - p[0] * (-r2 * inv).exp();
            c += r * r;
        }
    }
    c
}

fn normal_equations(plane: &Plane, p: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
    let (a, cx, cy, s) = (p[0], p[1], p[2], p[3]);
    let s2 = s * s;
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for y in 0..plane.height {
        let dy = y as f64 - cy;
        for x in 0..plane.width {
            let dx = x as f64 - cx;
            let r2 = dx * dx + dy * dy;
            let e = (-r2 / (2.0 * s2)).exp();
            let m = a * e;
            let j = Vector4::new(e, m * dx / s2, m * dy / s2, m * r2 / (s2 * s));
            let r = plane.get(x, y) - m;
            jtj += j * j.transpose();
            jtr += j * r;
        }
    }
    (jtj, jtr)
}

/// Samples `amplitude * exp(-r^2 / (2 sigma^2))` centered at `(cx, cy)`.
pub fn gaussian_blob(
    width: usize,
    height: usize,
    cx: f64,
    cy: f64,
    sigma: f64,
    amplitude: f64,
) -> Plane {
    let inv = 1.0 / (2.0 * sigma * sigma);
    Plane::from_fn(width, height, |x, y| {
        let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        amplitude * (-r2 * inv).exp()
    })
}
