//! Difference-of-Gaussians volume with a free ratio `kappa`.

use crate::error::Result;
use crate::image::DigitalImage;
use crate::parallel;
use crate::scalespace::{ScaleSpaceConfig, Seed};

/// One octave of the DoG volume, stored `(s, y, x)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DogOctave {
    pub octave: usize,
    pub delta: f64,
    pub width: usize,
    pub height: usize,
    /// Blur of the lower image of each slice, in input pixels.
    pub sigmas: Vec<f64>,
    pub data: Vec<f64>,
}

impl DogOctave {
    pub fn new(octave: usize, delta: f64, width: usize, height: usize, sigmas: Vec<f64>, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), sigmas.len() * width * height);
        Self {
            octave,
            delta,
            width,
            height,
            sigmas,
            data,
        }
    }

    pub fn slices(&self) -> usize {
        self.sigmas.len()
    }

    #[inline]
    pub fn at(&self, s: usize, m: usize, n: usize) -> f64 {
        self.data[(s * self.height + m) * self.width + n]
    }

    pub fn slice(&self, s: usize) -> &[f64] {
        let len = self.width * self.height;
        &self.data[s * len..(s + 1) * len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DogVolume {
    pub config: ScaleSpaceConfig,
    /// Dimensions of the image the volume was built from.
    pub input_width: usize,
    pub input_height: usize,
    pub octaves: Vec<DogOctave>,
}

/// Number of DoG slices per octave: `n_spo + 2`, so that the scan (which
/// skips the first and last slice) covers `s = 1 ..= n_spo` and consecutive
/// octaves tile the scale axis without gaps.
pub fn slices_per_octave(config: &ScaleSpaceConfig) -> usize {
    config.n_spo + 2
}

/// Builds `w(sigma_s) = v(kappa sigma_s) - v(sigma_s)` for every slice, both
/// images computed directly from the seed.
pub fn build_dog(input: &DigitalImage, config: &ScaleSpaceConfig) -> Result<DogVolume> {
    let seed = Seed::new(input, config)?;
    Ok(build_dog_from_seed(&seed))
}

pub fn build_dog_from_seed(seed: &Seed) -> DogVolume {
    let config = *seed.config();
    let n_slices = slices_per_octave(&config);
    let keys: Vec<(usize, usize)> = (0..seed.octaves())
        .flat_map(|o| (0..n_slices).map(move |s| (o, s)))
        .collect();
    let slices = parallel::map(&keys, |&(o, s)| {
        let sigma = config.sigma(o, s as f64);
        let lower = seed.level(o, sigma);
        let upper = seed.level(o, config.kappa * sigma);
        upper
            .data
            .iter()
            .zip(&lower.data)
            .map(|(a, b)| a - b)
            .collect::<Vec<f64>>()
    });
    let mut slices = slices.into_iter();
    let octaves = (0..seed.octaves())
        .map(|o| {
            let (w, h) = seed.octave_dims(o);
            let mut data = Vec::with_capacity(n_slices * w * h);
            for _ in 0..n_slices {
                data.extend(slices.next().expect("slice count"));
            }
            let sigmas = (0..n_slices).map(|s| config.sigma(o, s as f64)).collect();
            DogOctave::new(o, config.octave_delta(o), w, h, sigmas, data)
        })
        .collect();
    let (input_width, input_height) = seed.input_dims();
    DogVolume {
        config,
        input_width,
        input_height,
        octaves,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blobfit::gaussian_blob;

    #[test]
    fn constant_input_gives_zero_volume() {
        let img = DigitalImage::constant(24, 20, 0.3).unwrap();
        let dog = build_dog(&img, &ScaleSpaceConfig::default()).unwrap();
        assert!(!dog.octaves.is_empty());
        for o in &dog.octaves {
            assert_eq!(o.slices(), 5);
            assert!(o.data.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn coupled_kappa_matches_adjacent_differences() {
        // kappa = 2^(1/n_spo) makes slice s equal to v(sigma_{s+1}) - v(sigma_s)
        let plane = gaussian_blob(40, 36, 19.0, 17.5, 2.5, 1.0);
        let img = DigitalImage::from_plane(&plane, 1.0, Some(0.5)).unwrap();
        let cfg = ScaleSpaceConfig {
            n_oct: 2,
            ..ScaleSpaceConfig::default()
        };
        let seed = Seed::new(&img, &cfg).unwrap();
        let dog = build_dog_from_seed(&seed);
        for oct in &dog.octaves {
            for s in 0..oct.slices() {
                let a = seed.level(oct.octave, cfg.sigma(oct.octave, s as f64));
                let b = seed.level(oct.octave, cfg.sigma(oct.octave, (s + 1) as f64));
                let max = b
                    .data
                    .iter()
                    .zip(&a.data)
                    .zip(oct.slice(s))
                    .map(|((b, a), w)| (b - a - w).abs())
                    .fold(0.0, f64::max);
                assert!(max < 1e-4, "octave {} slice {s}: {max}", oct.octave);
            }
        }
    }
}
