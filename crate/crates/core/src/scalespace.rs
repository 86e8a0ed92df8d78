//! Digital Gaussian scale-space with decoupled sampling parameters.
//!
//! Every level is computed directly from the seed image (no cascading): one
//! spectral Gaussian multiply brings the seed from `sigma_min` to the level
//! blur, and the octave grid is obtained by evaluating the filtered DCT
//! series on every `2^o`-th seed sample. All blur arithmetic is carried in
//! input-pixel units and converted to grid pixels only at the multiply.

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bspline::resample_plane;
use crate::dct::DctSpectrum;
use crate::error::{Error, Result};
use crate::image::{DigitalImage, Plane};
use crate::parallel;

/// Octave grids smaller than this (in either direction) are not built.
pub const MIN_OCTAVE_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleSpaceConfig {
    pub n_oct: usize,
    pub n_spo: usize,
    pub sigma_min: f64,
    pub delta_min: f64,
    /// Assumed camera blur of the input, in input pixels.
    pub c: f64,
    /// Ratio between the two blurs subtracted in a DoG slice.
    pub kappa: f64,
}

impl Default for ScaleSpaceConfig {
    fn default() -> Self {
        Self {
            n_oct: 5,
            n_spo: 3,
            sigma_min: 0.8,
            delta_min: 0.5,
            c: 0.5,
            kappa: 2f64.powf(1.0 / 3.0),
        }
    }
}

impl ScaleSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_oct < 1 {
            return fail("n_oct must be >= 1".into());
        }
        if self.n_spo < 1 {
            return fail("n_spo must be >= 1".into());
        }
        if !(self.kappa > 1.0 && self.kappa.is_finite()) {
            return fail(format!("kappa must be > 1, got {}", self.kappa));
        }
        if !(self.delta_min > 0.0 && self.delta_min <= 1.0) {
            return fail(format!("delta_min must lie in (0, 1], got {}", self.delta_min));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return fail(format!("camera blur must be >= 0, got {}", self.c));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return fail(format!("sigma_min must be > 0, got {}", self.sigma_min));
        }
        if self.c > self.sigma_min {
            return fail(format!(
                "camera blur {} exceeds sigma_min {}: seed would need negative blur",
                self.c, self.sigma_min
            ));
        }
        Ok(())
    }

    /// `sigma_min 2^(o + s / n_spo)` in input pixels. `s` may exceed
    /// `n_spo - 1` for auxiliary slices.
    pub fn sigma(&self, octave: usize, scale: f64) -> f64 {
        self.sigma_min * (octave as f64 + scale / self.n_spo as f64).exp2()
    }

    pub fn octave_delta(&self, octave: usize) -> f64 {
        self.delta_min * (1u64 << octave) as f64
    }
}

/// The oversampled input brought to `sigma_min`, kept in the DCT domain.
#[derive(Debug, Clone)]
pub struct Seed {
    config: ScaleSpaceConfig,
    spectrum: DctSpectrum,
    input_width: usize,
    input_height: usize,
    octaves: usize,
}

impl Seed {
    pub fn new(input: &DigitalImage, config: &ScaleSpaceConfig) -> Result<Self> {
        config.validate()?;
        if let Some(b) = input.blur() {
            if (b - config.c).abs() > 1e-9 {
                log::debug!("input annotated with blur {b}, detector assumes c = {}", config.c);
            }
        }
        let plane = input.to_plane();
        let plane = if config.delta_min < 1.0 {
            resample_plane(&plane, config.delta_min)
        } else {
            plane
        };
        let mut spectrum = DctSpectrum::forward(&plane);
        let added = (config.sigma_min.powi(2) - config.c.powi(2)).max(0.0).sqrt();
        spectrum.apply_gaussian(added / config.delta_min);

        let mut octaves = 0;
        while octaves < config.n_oct {
            let step = 1usize << octaves;
            if plane.width.div_ceil(step) < MIN_OCTAVE_SIZE
                || plane.height.div_ceil(step) < MIN_OCTAVE_SIZE
            {
                warn!(
                    "stopping at {octaves} octaves: octave grid would be smaller than {MIN_OCTAVE_SIZE}x{MIN_OCTAVE_SIZE}"
                );
                break;
            }
            octaves += 1;
        }
        if octaves == 0 {
            return Err(Error::InvalidImage(format!(
                "seed {}x{} is smaller than {MIN_OCTAVE_SIZE}x{MIN_OCTAVE_SIZE}",
                plane.width, plane.height
            )));
        }
        Ok(Self {
            config: *config,
            spectrum,
            input_width: input.width(),
            input_height: input.height(),
            octaves,
        })
    }

    pub fn config(&self) -> &ScaleSpaceConfig {
        &self.config
    }

    /// Number of octaves that fit the image.
    pub fn octaves(&self) -> usize {
        self.octaves
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.input_width, self.input_height)
    }

    pub fn seed_dims(&self) -> (usize, usize) {
        (self.spectrum.width(), self.spectrum.height())
    }

    pub fn octave_dims(&self, octave: usize) -> (usize, usize) {
        let step = 1usize << octave;
        let (w, h) = self.seed_dims();
        (w.div_ceil(step), h.div_ceil(step))
    }

    /// The scale-space image of blur `sigma` (input pixels) on the grid of
    /// `octave`.
    pub fn level(&self, octave: usize, sigma: f64) -> Plane {
        let cfg = &self.config;
        let extra = (sigma * sigma - cfg.sigma_min * cfg.sigma_min).max(0.0).sqrt();
        let spec = self.spectrum.gaussian(extra / cfg.delta_min);
        if octave == 0 {
            return spec.inverse();
        }
        let step = (1usize << octave) as f64;
        let (w, h) = self.octave_dims(octave);
        let xs: Vec<f64> = (0..w).map(|j| j as f64 * step).collect();
        let ys: Vec<f64> = (0..h).map(|j| j as f64 * step).collect();
        spec.sample(&xs, &ys)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub octave: usize,
    pub scale: usize,
    pub sigma: f64,
    pub image: DigitalImage,
}

#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub config: ScaleSpaceConfig,
    pub levels: Vec<Level>,
}

/// Builds the levels `s = 0 .. n_spo - 1` of every octave.
pub fn build_scale_space(input: &DigitalImage, config: &ScaleSpaceConfig) -> Result<ScaleSpace> {
    let seed = Seed::new(input, config)?;
    let keys: Vec<(usize, usize)> = (0..seed.octaves())
        .flat_map(|o| (0..config.n_spo).map(move |s| (o, s)))
        .collect();
    let levels = parallel::map(&keys, |&(o, s)| {
        let sigma = config.sigma(o, s as f64);
        let plane = seed.level(o, sigma);
        DigitalImage::from_plane(&plane, config.octave_delta(o), Some(sigma)).map(|image| Level {
            octave: o,
            scale: s,
            sigma,
            image,
        })
    });
    Ok(ScaleSpace {
        config: *config,
        levels: levels.into_iter().collect::<Result<_>>()?,
    })
}

impl ScaleSpace {
    /// Writes one PFM per level plus `index.csv`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let index = dir.join("index.csv");
        let mut wtr = csv::Writer::from_path(&index)?;
        wtr.write_record(["octave", "scale", "sigma", "delta", "width", "height", "file"])?;
        for lv in &self.levels {
            let name = format!("o{}_s{}_sigma{:.6}.pfm", lv.octave, lv.scale, lv.sigma);
            crate::io::write_image(&lv.image, dir.join(&name))?;
            wtr.write_record([
                lv.octave.to_string(),
                lv.scale.to_string(),
                format!("{:.9}", lv.sigma),
                format!("{:.9}", lv.image.delta()),
                lv.image.width().to_string(),
                lv.image.height().to_string(),
                name,
            ])?;
        }
        wtr.flush().map_err(|e| Error::io(&index, e))
    }
}
