//! Discrete 3D extrema of the DoG volume, their quadratic refinement and the
//! per-keypoint features used by the stability filters.

use std::collections::HashSet;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::dog::{DogOctave, DogVolume};
use crate::error::{Error, Result};
use crate::image::DigitalImage;
use crate::keypoint::{sort_canonical, Features, Keypoint, RejectReason, Status};
use crate::parallel;
use crate::scalespace::ScaleSpaceConfig;

/// Relative determinant below which the 3x3 Hessian is treated as singular.
pub const SINGULAR_RELATIVE_DET: f64 = 1e-12;

/// Refinement attempts standing in for "unbounded".
pub const UNLIMITED_INTERP: usize = 1_000_000;

/// Scans every octave for voxels strictly above or strictly below all 26
/// neighbors, skipping the first and last slice and a one-pixel border.
pub fn scan_discrete_extrema(dog: &DogVolume) -> Vec<Keypoint> {
    let keys: Vec<(usize, usize)> = dog
        .octaves
        .iter()
        .enumerate()
        .filter(|(_, o)| o.slices() >= 3 && o.width >= 3 && o.height >= 3)
        .flat_map(|(i, o)| (1..o.slices() - 1).map(move |s| (i, s)))
        .collect();
    let found = parallel::map(&keys, |&(i, s)| scan_slice(&dog.octaves[i], s, &dog.config));
    found.into_iter().flatten().collect()
}

fn scan_slice(oct: &DogOctave, s: usize, cfg: &ScaleSpaceConfig) -> Vec<Keypoint> {
    let (w, h) = (oct.width, oct.height);
    let plane = w * h;
    let d = &oct.data;
    let mut offsets = Vec::with_capacity(26);
    for ds in -1isize..=1 {
        for dm in -1isize..=1 {
            for dn in -1isize..=1 {
                if ds != 0 || dm != 0 || dn != 0 {
                    offsets.push(ds * plane as isize + dm * w as isize + dn);
                }
            }
        }
    }
    let mut out = Vec::new();
    for m in 1..h - 1 {
        for n in 1..w - 1 {
            let idx = s * plane + m * w + n;
            let v = d[idx];
            let first = d[(idx as isize + offsets[0]) as usize];
            let is_ext = if v > first {
                offsets[1..].iter().all(|&o| v > d[(idx as isize + o) as usize])
            } else if v < first {
                offsets[1..].iter().all(|&o| v < d[(idx as isize + o) as usize])
            } else {
                false
            };
            if is_ext {
                out.push(Keypoint {
                    octave: oct.octave,
                    scale: s,
                    m,
                    n,
                    sigma: cfg.sigma(oct.octave, s as f64),
                    x: oct.delta * n as f64,
                    y: oct.delta * m as f64,
                    alpha: [0.0; 3],
                    dog_value: v,
                    features: Features::default(),
                    status: Status::Discrete,
                });
            }
        }
    }
    out
}

/// Value, gradient and Hessian at a node, by centered finite differences on
/// unit steps along `(s, m, n)`.
pub fn local_model(oct: &DogOctave, s: usize, m: usize, n: usize) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let v = |ds: isize, dm: isize, dn: isize| {
        oct.at(
            (s as isize + ds) as usize,
            (m as isize + dm) as usize,
            (n as isize + dn) as usize,
        )
    };
    let w = v(0, 0, 0);
    let g = Vector3::new(
        0.5 * (v(1, 0, 0) - v(-1, 0, 0)),
        0.5 * (v(0, 1, 0) - v(0, -1, 0)),
        0.5 * (v(0, 0, 1) - v(0, 0, -1)),
    );
    let h11 = v(1, 0, 0) + v(-1, 0, 0) - 2.0 * w;
    let h22 = v(0, 1, 0) + v(0, -1, 0) - 2.0 * w;
    let h33 = v(0, 0, 1) + v(0, 0, -1) - 2.0 * w;
    let h12 = 0.25 * (v(1, 1, 0) - v(1, -1, 0) - v(-1, 1, 0) + v(-1, -1, 0));
    let h13 = 0.25 * (v(1, 0, 1) - v(1, 0, -1) - v(-1, 0, 1) + v(-1, 0, -1));
    let h23 = 0.25 * (v(0, 1, 1) - v(0, 1, -1) - v(0, -1, 1) + v(0, -1, -1));
    let h = Matrix3::new(h11, h12, h13, h12, h22, h23, h13, h23, h33);
    (w, g, h)
}

/// Solves `H a = -g` through the adjugate. Returns `None` when
/// `|det H| <= SINGULAR_RELATIVE_DET * max|H_ij|^3`.
pub fn solve_offset(g: &Vector3<f64>, h: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let c00 = h[(1, 1)] * h[(2, 2)] - h[(1, 2)] * h[(2, 1)];
    let c01 = h[(1, 2)] * h[(2, 0)] - h[(1, 0)] * h[(2, 2)];
    let c02 = h[(1, 0)] * h[(2, 1)] - h[(1, 1)] * h[(2, 0)];
    let det = h[(0, 0)] * c00 + h[(0, 1)] * c01 + h[(0, 2)] * c02;
    let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(det.abs() > SINGULAR_RELATIVE_DET * scale.powi(3)) {
        return None;
    }
    let adj = Matrix3::new(
        c00,
        h[(0, 2)] * h[(2, 1)] - h[(0, 1)] * h[(2, 2)],
        h[(0, 1)] * h[(1, 2)] - h[(0, 2)] * h[(1, 1)],
        c01,
        h[(0, 0)] * h[(2, 2)] - h[(0, 2)] * h[(2, 0)],
        h[(0, 2)] * h[(1, 0)] - h[(0, 0)] * h[(1, 2)],
        c02,
        h[(0, 1)] * h[(2, 0)] - h[(0, 0)] * h[(2, 1)],
        h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)],
    );
    Some(-(adj * g) / det)
}

fn octave_of<'a>(dog: &'a DogVolume, kp: &Keypoint) -> &'a DogOctave {
    dog.octaves
        .iter()
        .find(|o| o.octave == kp.octave)
        .expect("keypoint octave missing from DoG volume")
}

/// Iterative quadratic refinement of a discrete extremum.
///
/// Each attempt fits the local quadratic model; the offset is accepted when
/// its sup-norm is below `m_offset`. Otherwise the node moves by
/// `round(alpha)` clamped to one step per axis and to the scan domain of the
/// octave. Revisiting a node (including staying put) can never converge and
/// is rejected immediately.
pub fn refine(kp: &Keypoint, dog: &DogVolume, m_offset: f64, n_interp: usize) -> Keypoint {
    let oct = octave_of(dog, kp);
    let cfg = &dog.config;
    let mut out = *kp;
    let (mut s, mut m, mut n) = (kp.scale, kp.m, kp.n);
    let mut visited = HashSet::new();
    visited.insert((s, m, n));
    for _ in 0..n_interp.max(1) {
        let (w, g, h) = local_model(oct, s, m, n);
        out.scale = s;
        out.m = m;
        out.n = n;
        let Some(a) = solve_offset(&g, &h) else {
            out.status = Status::Rejected(RejectReason::SingularHessian);
            return out;
        };
        if a.amax() < m_offset {
            out.alpha = [a[0], a[1], a[2]];
            out.dog_value = w + 0.5 * g.dot(&a);
            out.sigma = cfg.sigma(oct.octave, s as f64 + a[0]);
            out.y = oct.delta * (m as f64 + a[1]);
            out.x = oct.delta * (n as f64 + a[2]);
            let max_x = oct.delta * (oct.width - 1) as f64;
            let max_y = oct.delta * (oct.height - 1) as f64;
            out.status = if out.x >= 0.0 && out.x <= max_x && out.y >= 0.0 && out.y <= max_y && out.sigma > 0.0 {
                Status::Refined
            } else {
                Status::Rejected(RejectReason::OutsideDomain)
            };
            return out;
        }
        let step = |v: usize, d: f64, hi: usize| -> usize {
            let moved = v as isize + d.round().clamp(-1.0, 1.0) as isize;
            moved.clamp(1, hi as isize) as usize
        };
        let next = (
            step(s, a[0], oct.slices() - 2),
            step(m, a[1], oct.height - 2),
            step(n, a[2], oct.width - 2),
        );
        if !visited.insert(next) {
            break;
        }
        (s, m, n) = next;
    }
    out.status = Status::Rejected(RejectReason::NotConverged);
    out
}

/// Features of the DoG around the keypoint's node.
pub fn compute_features(kp: &Keypoint, dog: &DogVolume) -> Keypoint {
    let oct = octave_of(dog, kp);
    let (s, m, n) = (kp.scale, kp.m, kp.n);
    let (w, _, h) = local_model(oct, s, m, n);
    let eig = SymmetricEigen::new(h).eigenvalues;
    let abs: Vec<f64> = eig.iter().map(|v| v.abs()).collect();
    let largest = abs.iter().cloned().fold(0.0, f64::max);
    let smallest = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hessian_cond = if smallest > largest * f64::EPSILON {
        largest / smallest
    } else {
        f64::INFINITY
    };
    let mut gap = f64::INFINITY;
    for ds in -1isize..=1 {
        for dm in -1isize..=1 {
            for dn in -1isize..=1 {
                if ds == 0 && dm == 0 && dn == 0 {
                    continue;
                }
                let v = oct.at(
                    (s as isize + ds) as usize,
                    (m as isize + dm) as usize,
                    (n as isize + dn) as usize,
                );
                gap = gap.min((w - v).abs());
            }
        }
    }
    let mut out = *kp;
    out.features = Features {
        dog_abs: w.abs(),
        laplacian3d: h.trace(),
        hessian_cond,
        min_neighbor_gap: gap,
    };
    out
}

/// Keeps keypoints with `|dog_value| >= threshold`.
pub fn contrast_filter(kps: &[Keypoint], threshold: f64) -> Vec<Keypoint> {
    kps.iter()
        .filter(|k| k.dog_value.abs() >= threshold)
        .copied()
        .collect()
}

/// `tr(H)^2 / det(H)` of the spatial 2x2 Hessian, `None` when `det <= 0`.
pub fn edge_ratio(kp: &Keypoint, dog: &DogVolume) -> Option<f64> {
    let oct = octave_of(dog, kp);
    let (_, _, h) = local_model(oct, kp.scale, kp.m, kp.n);
    let (a, b, d) = (h[(1, 1)], h[(1, 2)], h[(2, 2)]);
    let det = a * d - b * b;
    (det > 0.0).then(|| (a + d).powi(2) / det)
}

/// Keeps keypoints whose spatial Hessian satisfies
/// `tr^2 / det < (r + 1)^2 / r`.
pub fn edge_filter(kps: &[Keypoint], dog: &DogVolume, r_edge: f64) -> Vec<Keypoint> {
    let bound = (r_edge + 1.0).powi(2) / r_edge;
    kps.iter()
        .filter(|k| edge_ratio(k, dog).is_some_and(|r| r < bound))
        .copied()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorProfile {
    pub scale_space: ScaleSpaceConfig,
    /// When false, discrete extrema are reported without refinement.
    pub refine: bool,
    pub m_offset: f64,
    pub n_interp: usize,
    pub contrast_threshold: Option<f64>,
    pub edge_ratio: Option<f64>,
}

impl Default for DetectorProfile {
    fn default() -> Self {
        Self {
            scale_space: ScaleSpaceConfig::default(),
            refine: true,
            m_offset: 0.6,
            n_interp: 2,
            contrast_threshold: None,
            edge_ratio: None,
        }
    }
}

impl DetectorProfile {
    pub fn validate(&self) -> Result<()> {
        self.scale_space.validate()?;
        if !(self.m_offset > 0.0) {
            return Err(Error::Config(format!("m_offset must be > 0, got {}", self.m_offset)));
        }
        if self.n_interp < 1 {
            return Err(Error::Config("n_interp must be >= 1".into()));
        }
        if let Some(r) = self.edge_ratio {
            if !(r > 1.0) {
                return Err(Error::Config(format!("edge ratio must be > 1, got {r}")));
            }
        }
        Ok(())
    }
}

/// Runs scan, refinement, features and the enabled filters on a prebuilt
/// volume. Output is in canonical order.
pub fn detect_on_dog(dog: &DogVolume, profile: &DetectorProfile) -> Vec<Keypoint> {
    let discrete = scan_discrete_extrema(dog);
    let mut kps: Vec<Keypoint> = parallel::map(&discrete, |kp| {
        let kp = if profile.refine {
            refine(kp, dog, profile.m_offset, profile.n_interp)
        } else {
            *kp
        };
        compute_features(&kp, dog)
    })
    .into_iter()
    .filter(|k| !matches!(k.status, Status::Rejected(_)))
    .collect();
    if let Some(t) = profile.contrast_threshold {
        kps = contrast_filter(&kps, t);
    }
    if let Some(r) = profile.edge_ratio {
        kps = edge_filter(&kps, dog, r);
    }
    sort_canonical(&mut kps);
    kps
}

pub fn detect(image: &DigitalImage, profile: &DetectorProfile) -> Result<Vec<Keypoint>> {
    profile.validate()?;
    let dog = crate::dog::build_dog(image, &profile.scale_space)?;
    Ok(detect_on_dog(&dog, profile))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A single-octave volume of `slices x size x size` filled by `f(s, m, n)`.
    fn volume(slices: usize, size: usize, f: impl Fn(f64, f64, f64) -> f64) -> DogVolume {
        let cfg = ScaleSpaceConfig {
            n_oct: 1,
            n_spo: slices - 2,
            sigma_min: 1.0,
            delta_min: 1.0,
            c: 0.5,
            kappa: 1.2,
        };
        let mut data = Vec::new();
        for s in 0..slices {
            for m in 0..size {
                for n in 0..size {
                    data.push(f(s as f64, m as f64, n as f64));
                }
            }
        }
        let sigmas = (0..slices).map(|s| cfg.sigma(0, s as f64)).collect();
        DogVolume {
            config: cfg,
            input_width: size,
            input_height: size,
            octaves: vec![DogOctave::new(0, 1.0, size, size, sigmas, data)],
        }
    }

    #[test]
    fn constant_volume_has_no_extrema() {
        assert!(scan_discrete_extrema(&volume(5, 8, |_, _, _| 0.25)).is_empty());
    }

    #[test]
    fn single_raised_voxel_is_the_only_maximum() {
        let dog = volume(5, 9, |s, m, n| if (s, m, n) == (2.0, 4.0, 5.0) { 1.0 } else { 0.0 });
        let kps = scan_discrete_extrema(&dog);
        assert_eq!(kps.len(), 1);
        assert_eq!((kps[0].scale, kps[0].m, kps[0].n), (2, 4, 5));
        assert_eq!(kps[0].status, Status::Discrete);
    }

    #[test]
    fn ties_yield_no_detection() {
        let dog = volume(5, 9, |s, m, n| {
            if s == 2.0 && m == 4.0 && (n == 4.0 || n == 5.0) {
                1.0
            } else {
                0.0
            }
        });
        assert!(scan_discrete_extrema(&dog).is_empty());
    }

    #[test]
    fn quadratic_offset_is_exact() {
        let c = [2.2, 4.1, 3.7];
        let dog = volume(5, 9, |s, m, n| 1.0 - ((s - c[0]).powi(2) + (m - c[1]).powi(2) + (n - c[2]).powi(2)));
        let kps = scan_discrete_extrema(&dog);
        assert_eq!(kps.len(), 1);
        let r = refine(&kps[0], &dog, 0.6, 2);
        assert_eq!(r.status, Status::Refined);
        assert!((r.alpha[0] - 0.2).abs() < 1e-10);
        assert!((r.alpha[1] - 0.1).abs() < 1e-10);
        assert!((r.alpha[2] + 0.3).abs() < 1e-10);
        assert!((r.dog_value - 1.0).abs() < 1e-10);
        assert!((r.x - 3.7).abs() < 1e-10 && (r.y - 4.1).abs() < 1e-10);
        assert!((r.sigma - dog.config.sigma(0, 2.2)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_peak_has_zero_offset() {
        let dog = volume(5, 9, |s, m, n| -((s - 2.0).abs() + (m - 4.0).abs() + (n - 4.0).abs()));
        let kp = scan_discrete_extrema(&dog)[0];
        let r = refine(&kp, &dog, 0.6, 2);
        assert_eq!(r.alpha, [0.0, 0.0, 0.0]);
        assert_eq!(r.dog_value, 0.0);
    }

    #[test]
    fn far_offset_relocates_once() {
        // discrete max at m = 4 but true peak at m = 4.9: first fit gives
        // alpha_2 = 0.9, relocation to m = 5 gives alpha_2 = -0.1
        let dog = volume(5, 11, |s, m, n| {
            1.0 - (s - 2.0).powi(2) - (n - 5.0).powi(2) - if m <= 4.0 { (m - 4.9).powi(2) } else { 0.1 * (m - 4.9).powi(2) }
        });
        let kp = Keypoint {
            m: 4,
            ..scan_discrete_extrema(&volume(5, 11, |s, m, n| {
                -((s - 2.0).powi(2) + (m - 4.0).powi(2) + (n - 5.0).powi(2))
            }))[0]
        };
        let (_, g, h) = local_model(&dog.octaves[0], 2, 4, 5);
        let first = solve_offset(&g, &h).unwrap();
        assert!(first[1] > 0.6);
        let once = refine(&kp, &dog, 0.6, 1);
        assert!(matches!(once.status, Status::Rejected(RejectReason::NotConverged)));
        let twice = refine(&kp, &dog, 0.6, 2);
        assert_eq!(twice.status, Status::Refined);
        assert_eq!(twice.m, 5);
        assert!(twice.alpha[1].abs() < 0.6);
    }

    #[test]
    fn singular_hessian_is_rejected() {
        let dog = volume(5, 9, |s, _, _| -(s - 2.0).powi(2));
        let kp = Keypoint {
            octave: 0,
            scale: 2,
            m: 4,
            n: 4,
            sigma: 1.0,
            x: 4.0,
            y: 4.0,
            alpha: [0.0; 3],
            dog_value: 0.0,
            features: Features::default(),
            status: Status::Discrete,
        };
        let r = refine(&kp, &dog, 0.6, 2);
        assert_eq!(r.status, Status::Rejected(RejectReason::SingularHessian));
    }

    #[test]
    fn features_of_quadratic_bowl() {
        let dog = volume(5, 9, |s, m, n| (s - 2.0).powi(2) + 2.0 * (m - 4.0).powi(2) + 4.0 * (n - 4.0).powi(2));
        let kp = scan_discrete_extrema(&dog)[0];
        let f = compute_features(&kp, &dog).features;
        assert!((f.hessian_cond - 4.0).abs() < 1e-12);
        assert!((f.laplacian3d - 14.0).abs() < 1e-12);
        assert_eq!(f.dog_abs, 0.0);
        assert_eq!(f.min_neighbor_gap, 1.0);

        let iso = volume(5, 9, |s, m, n| (s - 2.0).powi(2) + (m - 4.0).powi(2) + (n - 4.0).powi(2));
        let f = compute_features(&scan_discrete_extrema(&iso)[0], &iso).features;
        assert!((f.hessian_cond - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tie_with_neighbor_gives_zero_gap() {
        let dog = volume(5, 9, |s, m, n| if (s, m) == (2.0, 4.0) && (n == 4.0 || n == 5.0) { 1.0 } else { 0.0 });
        let kp = Keypoint {
            octave: 0,
            scale: 2,
            m: 4,
            n: 4,
            sigma: 1.0,
            x: 4.0,
            y: 4.0,
            alpha: [0.0; 3],
            dog_value: 1.0,
            features: Features::default(),
            status: Status::Discrete,
        };
        assert_eq!(compute_features(&kp, &dog).features.min_neighbor_gap, 0.0);
    }

    #[test]
    fn contrast_filter_contract() {
        let mk = |v: f64| Keypoint {
            dog_value: v,
            ..crate::keypoint::test_keypoint(1.0, 1.0, 1.0)
        };
        let kps = vec![mk(0.01), mk(-0.05)];
        assert_eq!(contrast_filter(&kps, 0.0).len(), 2);
        assert!(contrast_filter(&kps, f64::INFINITY).is_empty());
        let kept = contrast_filter(&kps, 0.03);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].dog_value, -0.05);
    }

    #[test]
    fn edge_filter_contract() {
        let kp_at = |dog: &DogVolume| Keypoint {
            octave: 0,
            scale: 2,
            m: 4,
            n: 4,
            ..crate::keypoint::test_keypoint(4.0, 4.0, 1.0)
        }
        .with_coords(4.0, 4.0, dog.config.sigma(0, 2.0));
        let iso = volume(5, 9, |s, m, n| -((s - 2.0).powi(2) + (m - 4.0).powi(2) + (n - 4.0).powi(2)));
        let k = kp_at(&iso);
        assert!((edge_ratio(&k, &iso).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(edge_filter(&[k], &iso, 1.0001).len(), 1);
        let ridge = volume(5, 9, |s, m, n| -((s - 2.0).powi(2) + 100.0 * (m - 4.0).powi(2) + (n - 4.0).powi(2)));
        // (101)^2 / 100 = 102.01 > 121 / 10
        assert!(edge_filter(&[kp_at(&ridge)], &ridge, 10.0).is_empty());
        let saddle = volume(5, 9, |s, m, n| -((s - 2.0).powi(2) + (m - 4.0).powi(2) - (n - 4.0).powi(2)));
        assert!(edge_ratio(&kp_at(&saddle), &saddle).is_none());
        assert!(edge_filter(&[kp_at(&saddle)], &saddle, 10.0).is_empty());
    }

    #[test]
    fn profile_validation() {
        let mut p = DetectorProfile::default();
        assert!(p.validate().is_ok());
        p.m_offset = 0.0;
        assert!(p.validate().is_err());
        p = DetectorProfile {
            edge_ratio: Some(1.0),
            ..DetectorProfile::default()
        };
        assert!(p.validate().is_err());
    }
}
