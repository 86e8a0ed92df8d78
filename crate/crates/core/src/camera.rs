//! Simulated acquisitions of a high-resolution reference: Gaussian camera
//! blur, subsampling, subpixel translation, zoom-out and additive noise.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dct::DctSpectrum;
use crate::error::{ensure_param, Error, Result};
use crate::image::DigitalImage;
use crate::keypoint::Keypoint;
use crate::parallel;

/// Smallest simulated output, per side.
pub const MIN_OUTPUT_SIZE: usize = 64;

/// Subsampling factor below which the reference's own blur and aliasing are
/// no longer negligible.
pub const FAITHFUL_S: f64 = 10.0;

/// Generator used for noise, offsets and blur draws.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.3)";

const NOISE_STREAM: u64 = 1;
const OFFSET_STREAM: u64 = 2;
const BLUR_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSpec {
    /// Camera blur, output pixels.
    pub c: f64,
    pub s_factor: f64,
    /// Output pixels.
    pub translation: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl AcquisitionSpec {
    pub fn new(c: f64, s_factor: f64) -> Self {
        Self {
            c,
            s_factor,
            translation: (0.0, 0.0),
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_param!(self.c > 0.0 && self.c.is_finite(), "camera blur must be > 0, got {}", self.c);
        ensure_param!(
            self.s_factor >= 1.0 && self.s_factor.is_finite(),
            "subsampling factor must be >= 1, got {}",
            self.s_factor
        );
        ensure_param!(
            self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(),
            "noise sigma must be >= 0, got {}",
            self.noise_sigma
        );
        ensure_param!(
            self.translation.0.is_finite() && self.translation.1.is_finite(),
            "translation must be finite"
        );
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of series member `i`.
pub fn member_seed(seed: u64, i: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reference image held in the DCT domain so that many acquisitions can
/// share one forward transform.
#[derive(Debug, Clone)]
pub struct Camera {
    spectrum: DctSpectrum,
    reference_blur: f64,
}

impl Camera {
    pub fn new(reference: &DigitalImage) -> Self {
        Self {
            spectrum: DctSpectrum::forward(&reference.to_plane()),
            reference_blur: reference.blur().unwrap_or(0.0),
        }
    }

    pub fn reference_dims(&self) -> (usize, usize) {
        (self.spectrum.width(), self.spectrum.height())
    }

    /// Output dimensions for subsampling factor `s`, independent of any
    /// translation in `[0, 1]`.
    pub fn output_dims(&self, s: f64) -> (usize, usize) {
        let (w, h) = self.reference_dims();
        let f = |n: usize| ((n - 1) as f64 / s + 1e-9).floor() as usize;
        (f(w), f(h))
    }

    pub fn snapshot(&self, spec: &AcquisitionSpec) -> Result<DigitalImage> {
        spec.validate()?;
        let s = spec.s_factor;
        let (w, h) = self.output_dims(s);
        if w < MIN_OUTPUT_SIZE || h < MIN_OUTPUT_SIZE {
            return Err(Error::InvalidParameter(format!(
                "simulated output {w}x{h} is smaller than {MIN_OUTPUT_SIZE}x{MIN_OUTPUT_SIZE}"
            )));
        }
        if s < FAITHFUL_S {
            log::warn!("subsampling factor {s} < {FAITHFUL_S}: reference blur and aliasing leak into the simulation");
        }
        let (tx, ty) = spec.translation;
        let xs: Vec<f64> = (0..w).map(|k| s * (k as f64 + tx)).collect();
        let ys: Vec<f64> = (0..h).map(|l| s * (l as f64 + ty)).collect();
        let mut plane = self.spectrum.gaussian(spec.c * s).sample(&xs, &ys);
        if spec.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, spec.noise_sigma).expect("validated noise sigma");
            let mut rng = stream_rng(spec.seed, NOISE_STREAM);
            for v in plane.data.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        let blur = (spec.c.powi(2) + (self.reference_blur / s).powi(2)).sqrt();
        DigitalImage::from_plane(&plane, 1.0, Some(blur))
    }
}

pub fn simulate_snapshot(reference: &DigitalImage, spec: &AcquisitionSpec) -> Result<DigitalImage> {
    Camera::new(reference).snapshot(spec)
}

/// One member of a series: its acquisition and its zoom relative to the
/// series' base subsampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shot {
    pub spec: AcquisitionSpec,
    pub zoom: f64,
}

impl Shot {
    /// Maps detections of this shot to the base frame:
    /// `zoom * (x + tx)`, `zoom * (y + ty)`, `zoom * sigma`.
    pub fn to_common_frame(&self, kps: &[Keypoint]) -> Vec<Keypoint> {
        let (tx, ty) = self.spec.translation;
        kps.iter()
            .map(|k| k.with_coords(self.zoom * (k.x + tx), self.zoom * (k.y + ty), self.zoom * k.sigma))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Series {
    pub images: Vec<DigitalImage>,
    pub shots: Vec<Shot>,
}

impl Series {
    fn generate(camera: &Camera, shots: Vec<Shot>) -> Result<Self> {
        let images = parallel::map(&shots, |s| camera.snapshot(&s.spec))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { images, shots })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Scale interval, in base-frame units, covered by every member when
    /// each detects within `[sigma_lo, sigma_hi]` of its own pixels.
    pub fn common_scale_range(&self, sigma_lo: f64, sigma_hi: f64) -> (f64, f64) {
        let zmax = self.shots.iter().map(|s| s.zoom).fold(f64::MIN, f64::max);
        let zmin = self.shots.iter().map(|s| s.zoom).fold(f64::MAX, f64::min);
        (zmax * sigma_lo, zmin * sigma_hi)
    }

    /// Manifest CSV: `file,tx,ty,S,c_real,noise_sigma,seed`, one row per
    /// member with the given file names.
    pub fn write_manifest<W: Write>(&self, out: W, files: &[String]) -> Result<()> {
        if files.len() != self.len() {
            return Err(Error::InvalidParameter("one file name per series member required".into()));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["file", "tx", "ty", "S", "c_real", "noise_sigma", "seed"])?;
        for (f, s) in files.iter().zip(&self.shots) {
            let a = &s.spec;
            w.write_record([
                f.clone(),
                format!("{:.17e}", a.translation.0),
                format!("{:.17e}", a.translation.1),
                format!("{}", a.s_factor),
                format!("{:.17e}", a.c),
                format!("{}", a.noise_sigma),
                a.seed.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))
    }
}

/// Reads a manifest written by [`Series::write_manifest`]. Zoom factors are
/// taken relative to the smallest `S`.
pub fn read_manifest<R: std::io::Read>(input: R) -> Result<Vec<(String, Shot)>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["file", "tx", "ty", "S", "c_real", "noise_sigma", "seed"] {
        return Err(Error::MalformedHeader(format!("unexpected manifest columns {header:?}")));
    }
    let num = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| Error::MalformedHeader(format!("bad manifest value {v:?}")))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let spec = AcquisitionSpec {
            translation: (num(&rec[1])?, num(&rec[2])?),
            s_factor: num(&rec[3])?,
            c: num(&rec[4])?,
            noise_sigma: num(&rec[5])?,
            seed: rec[6]
                .parse()
                .map_err(|_| Error::MalformedHeader(format!("bad manifest seed {:?}", &rec[6])))?,
        };
        rows.push((rec[0].to_string(), Shot { spec, zoom: 1.0 }));
    }
    let s_min = rows.iter().map(|r| r.1.spec.s_factor).fold(f64::MAX, f64::min);
    for r in &mut rows {
        r.1.zoom = r.1.spec.s_factor / s_min;
    }
    Ok(rows)
}

fn offsets(seed: u64, n: usize) -> Vec<(f64, f64)> {
    let mut rng = stream_rng(seed, OFFSET_STREAM);
    (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect()
}

/// `n_images` snapshots at random subpixel offsets in `[0, 1)^2`.
pub fn make_translation_series(
    camera: &Camera,
    c: f64,
    s_factor: f64,
    noise_sigma: f64,
    n_images: usize,
    seed: u64,
) -> Result<Series> {
    ensure_param!(n_images >= 2, "a translation series needs at least 2 images, got {n_images}");
    let shots = offsets(seed, n_images)
        .into_iter()
        .enumerate()
        .map(|(i, t)| Shot {
            spec: AcquisitionSpec {
                c,
                s_factor,
                translation: t,
                noise_sigma,
                seed: member_seed(seed, i),
            },
            zoom: 1.0,
        })
        .collect();
    Series::generate(camera, shots)
}

/// Untranslated snapshots of one acquisition differing only in their noise
/// realization.
pub fn make_noise_series(
    camera: &Camera,
    c: f64,
    s_factor: f64,
    noise_sigma: f64,
    n_images: usize,
    seed: u64,
) -> Result<Series> {
    ensure_param!(n_images >= 1, "empty series");
    let shots = (0..n_images)
        .map(|i| Shot {
            spec: AcquisitionSpec {
                c,
                s_factor,
                translation: (0.0, 0.0),
                noise_sigma,
                seed: member_seed(seed, i),
            },
            zoom: 1.0,
        })
        .collect();
    Series::generate(camera, shots)
}

/// Untranslated snapshots at `S = s_base * zoom`.
pub fn make_zoom_series(camera: &Camera, c: f64, s_base: f64, zoom_factors: &[f64], seed: u64) -> Result<Series> {
    ensure_param!(!zoom_factors.is_empty(), "empty zoom list");
    for &z in zoom_factors {
        ensure_param!(z >= 1.0 && z.is_finite(), "zoom factors must be >= 1, got {z}");
    }
    let shots = zoom_factors
        .iter()
        .enumerate()
        .map(|(i, &z)| Shot {
            spec: AcquisitionSpec {
                c,
                s_factor: s_base * z,
                translation: (0.0, 0.0),
                noise_sigma: 0.0,
                seed: member_seed(seed, i),
            },
            zoom: z,
        })
        .collect();
    Series::generate(camera, shots)
}

/// Translated snapshots whose actual blur is drawn uniformly from
/// `[c_assumed - delta_c, c_assumed + delta_c]`. The drawn value is stored
/// in each shot's `spec.c`.
pub fn wrong_blur_series(
    camera: &Camera,
    c_assumed: f64,
    delta_c: f64,
    n_images: usize,
    s_factor: f64,
    seed: u64,
) -> Result<Series> {
    ensure_param!(delta_c >= 0.0, "delta_c must be >= 0, got {delta_c}");
    ensure_param!(
        c_assumed - delta_c > 0.0,
        "c_assumed - delta_c must be > 0, got {}",
        c_assumed - delta_c
    );
    ensure_param!(n_images >= 1, "empty series");
    let mut blur_rng = stream_rng(seed, BLUR_STREAM);
    let shots = offsets(seed, n_images)
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let u: f64 = blur_rng.gen();
            Shot {
                spec: AcquisitionSpec {
                    c: c_assumed + delta_c * (2.0 * u - 1.0),
                    s_factor,
                    translation: t,
                    noise_sigma: 0.0,
                    seed: member_seed(seed, i),
                },
                zoom: 1.0,
            }
        })
        .collect();
    Series::generate(camera, shots)
}
