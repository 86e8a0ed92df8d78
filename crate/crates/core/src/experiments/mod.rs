//! Configuration-driven experiment runners.
//!
//! Every runner takes an [`ExperimentSpec`], returns its results as plain
//! values, and writes RFC-4180 CSV files when the spec names an output
//! directory. Runs are deterministic given the spec seed.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Series};
use crate::error::{Error, Result};
use crate::extrema::{detect_on_dog, DetectorProfile};
use crate::image::DigitalImage;
use crate::keypoint::Keypoint;
use crate::matching::MatchTolerance;
use crate::parallel;
use crate::scalespace::{ScaleSpaceConfig, Seed};
use crate::synthetic::DeadLeaves;

mod grid;
mod kappa;
mod perturbation;
mod refinement;
mod semigroup;
mod stability;

pub use grid::{run_sampling_grid, GridCell, SamplingGridResult};
pub use kappa::{run_kappa_study, KappaResult};
pub use perturbation::{run_perturbation_study, BandRow, PerturbationResult, PerturbationRow};
pub use refinement::{run_refinement_study, RefinementResult, RefinementRow};
pub use semigroup::{run_semigroup, SemigroupRow};
pub use stability::{feature_roc, run_feature_roc, run_sampling_stability, FeatureRocResult, SamplingStabilityResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Semigroup,
    SamplingGrid,
    SamplingStability,
    FeatureRoc,
    RefinementStudy,
    KappaStudy,
    Aliasing,
    WrongBlur,
    Noise,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        Self::Semigroup,
        Self::SamplingGrid,
        Self::SamplingStability,
        Self::FeatureRoc,
        Self::RefinementStudy,
        Self::KappaStudy,
        Self::Aliasing,
        Self::WrongBlur,
        Self::Noise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Semigroup => "semigroup",
            Self::SamplingGrid => "sampling_grid",
            Self::SamplingStability => "sampling_stability",
            Self::FeatureRoc => "feature_roc",
            Self::RefinementStudy => "refinement_study",
            Self::KappaStudy => "kappa_study",
            Self::Aliasing => "aliasing",
            Self::WrongBlur => "wrong_blur",
            Self::Noise => "noise",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind {s:?}")))
    }
}

/// The reference scene: an image file, or a synthetic dead-leaves render.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSpec {
    pub path: Option<PathBuf>,
    /// Blur of the reference image in its own pixels, when loaded from file.
    pub blur: Option<f64>,
    pub synthetic: DeadLeaves,
}

impl ReferenceSpec {
    pub fn load(&self) -> Result<DigitalImage> {
        match &self.path {
            Some(p) => crate::io::read_image(p)?.with_blur(self.blur.or(Some(0.5))),
            None => self.synthetic.render(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionRanges {
    /// Camera blur of the simulated images, output pixels.
    pub c: f64,
    pub s_factor: f64,
    pub n_images: usize,
    pub noise_sigma: f64,
}

impl Default for AcquisitionRanges {
    fn default() -> Self {
        Self {
            c: 1.1,
            s_factor: 10.0,
            n_images: 10,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    #[default]
    Translation,
    Zoom,
}

/// Kind-specific parameter lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub n_spo: Vec<usize>,
    pub delta_min: Vec<f64>,
    pub m_offset: Vec<f64>,
    pub n_interp: Vec<usize>,
    /// DoG ratios are `2^(1/k)` for each `k` listed.
    pub kappa_inv_exponent: Vec<u32>,
    pub c: Vec<f64>,
    pub delta_c: Vec<f64>,
    pub sigma_min: Vec<f64>,
    pub noise_sigma: Vec<f64>,
    pub zoom: Vec<f64>,
    /// Per-iteration blur of the semigroup experiment.
    pub sigma: Vec<f64>,
    pub n_iter: usize,
    pub series: SeriesKind,
    /// Octaves kept by the perturbation studies.
    pub n_oct: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_spo: vec![3, 15],
            delta_min: vec![0.5],
            m_offset: vec![0.5, 0.6, 1.0, f64::INFINITY],
            n_interp: vec![1, 2, crate::extrema::UNLIMITED_INTERP],
            kappa_inv_exponent: (2..=30).collect(),
            c: vec![0.25, 0.4, 0.6, 0.8, 1.1],
            delta_c: vec![0.05, 0.1, 0.2, 0.4],
            sigma_min: vec![1.1, 1.6, 2.2],
            noise_sigma: vec![0.0125, 0.025, 0.05],
            zoom: vec![1.0, 1.25, 1.5, 1.75, 2.0],
            sigma: vec![0.3, 0.5, 1.0, 1.5],
            n_iter: 10,
            series: SeriesKind::Translation,
            n_oct: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub detector: DetectorProfile,
    #[serde(default)]
    pub acquisition: AcquisitionRanges,
    #[serde(default)]
    pub tolerance: MatchTolerance,
    #[serde(default)]
    pub grid: GridSpec,
}

impl ExperimentSpec {
    /// Defaults for `kind`, tuned to run in minutes on one core.
    pub fn new(kind: ExperimentKind) -> Self {
        let mut detector = DetectorProfile::default();
        detector.scale_space.sigma_min = 1.1;
        detector.scale_space.c = 1.1;
        let mut spec = Self {
            kind,
            seed: 1,
            out_dir: None,
            reference: ReferenceSpec::default(),
            detector,
            acquisition: AcquisitionRanges::default(),
            tolerance: MatchTolerance::default(),
            grid: GridSpec::default(),
        };
        match kind {
            ExperimentKind::SamplingGrid => {
                spec.grid.n_spo = vec![2, 3, 5, 8, 12];
                spec.grid.delta_min = vec![1.0, 0.5, 0.25, 0.125, 0.0625];
            }
            ExperimentKind::SamplingStability | ExperimentKind::FeatureRoc => {
                spec.grid.n_spo = (3..=19).collect();
                spec.reference.synthetic = DeadLeaves {
                    width: 2048,
                    height: 2048,
                    disks: 12000,
                    ..DeadLeaves::default()
                };
            }
            ExperimentKind::KappaStudy => {
                spec.detector.scale_space.n_spo = 15;
                spec.detector.scale_space.n_oct = 2;
            }
            ExperimentKind::Aliasing | ExperimentKind::WrongBlur | ExperimentKind::Noise => {
                spec.detector.scale_space.n_spo = 15;
                spec.acquisition.c = 0.7;
                spec.detector.scale_space.c = 0.7;
                if kind == ExperimentKind::Noise {
                    spec.acquisition.n_images = 5;
                    spec.acquisition.c = 0.8;
                    spec.detector.scale_space.c = 0.8;
                }
            }
            _ => {}
        }
        spec
    }

    /// Parses a spec whose omitted fields take the defaults of its kind.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_for(None, text)
    }

    /// Like [`from_toml`](Self::from_toml); `kind` is used when the text
    /// does not name one and must agree with it otherwise.
    pub fn from_toml_for(kind: Option<ExperimentKind>, text: &str) -> Result<Self> {
        let cfg = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let user: toml::Table = toml::from_str(text).map_err(|e| cfg(&e))?;
        let named = match user.get("kind") {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| Error::Config("kind must be a string".into()))?
                    .parse::<ExperimentKind>()?,
            ),
            None => None,
        };
        let kind = match (named, kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!(
                    "config is for {} but {} was requested",
                    a.name(),
                    b.name()
                )))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(Error::Config("missing experiment kind".into())),
        };
        let mut merged = toml::Table::try_from(Self::new(kind)).map_err(|e| cfg(&e))?;
        merge(&mut merged, user);
        let spec: Self = merged.try_into().map_err(|e: toml::de::Error| cfg(&e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_for(None, path)
    }

    pub fn load_for(kind: Option<ExperimentKind>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_for(kind, &text)
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.tolerance.validate()?;
        let g = &self.grid;
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{} requires a nonempty {what} list", self.kind.name())))
            }
        };
        let a = &self.acquisition;
        if !(a.c > 0.0 && a.s_factor >= 1.0 && a.noise_sigma >= 0.0) {
            return Err(Error::Config("acquisition needs c > 0, s_factor >= 1, noise_sigma >= 0".into()));
        }
        match self.kind {
            ExperimentKind::Semigroup => {
                need(!g.sigma.is_empty(), "sigma")?;
                if g.n_iter == 0 {
                    return Err(Error::Config("semigroup requires n_iter >= 1".into()));
                }
            }
            ExperimentKind::SamplingGrid => {
                need(!g.n_spo.is_empty(), "n_spo")?;
                need(!g.delta_min.is_empty(), "delta_min")?;
            }
            ExperimentKind::SamplingStability | ExperimentKind::FeatureRoc => {
                need(g.n_spo.len() >= 2, "n_spo (>= 2 entries)")?;
            }
            ExperimentKind::RefinementStudy => {
                need(!g.n_spo.is_empty(), "n_spo")?;
                need(!g.m_offset.is_empty(), "m_offset")?;
                need(!g.n_interp.is_empty(), "n_interp")?;
                if g.series == SeriesKind::Zoom {
                    need(g.zoom.len() >= 2, "zoom (>= 2 entries)")?;
                } else if a.n_images < 2 {
                    return Err(Error::Config("refinement_study needs n_images >= 2".into()));
                }
            }
            ExperimentKind::KappaStudy => need(!g.kappa_inv_exponent.is_empty(), "kappa_inv_exponent")?,
            ExperimentKind::Aliasing => need(!g.c.is_empty(), "c")?,
            ExperimentKind::WrongBlur => {
                need(!g.delta_c.is_empty(), "delta_c")?;
                need(!g.sigma_min.is_empty(), "sigma_min")?;
            }
            ExperimentKind::Noise => {
                need(!g.noise_sigma.is_empty(), "noise_sigma")?;
                need(!g.sigma_min.is_empty(), "sigma_min")?;
            }
        }
        for &m in &g.m_offset {
            if !(m > 0.0) {
                return Err(Error::Config(format!("m_offset values must be > 0, got {m}")));
            }
        }
        if g.n_interp.contains(&0) {
            return Err(Error::Config("n_interp values must be >= 1".into()));
        }
        if g.kappa_inv_exponent.contains(&0) {
            return Err(Error::Config("kappa_inv_exponent values must be >= 1".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Spatial step matching the spacing of the first two DoG scales:
/// `sqrt(2) kappa sigma_min (2^(1/n_spo) - 1)`.
pub fn balanced_delta_min(n_spo: usize, sigma_min: f64, kappa: f64) -> f64 {
    std::f64::consts::SQRT_2 * kappa * sigma_min * (2f64.powf(1.0 / n_spo as f64) - 1.0)
}

/// `base` with `n_spo` and the balanced `delta_min` (capped at 1).
pub fn balanced_config(base: &ScaleSpaceConfig, n_spo: usize) -> ScaleSpaceConfig {
    ScaleSpaceConfig {
        n_spo,
        delta_min: balanced_delta_min(n_spo, base.sigma_min, base.kappa).min(1.0),
        ..*base
    }
}

pub(crate) fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Population coefficient of variation.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Builds one DoG volume and runs every profile on it. All profiles must
/// share `scale_space`.
pub(crate) fn detect_variants(image: &DigitalImage, profiles: &[DetectorProfile]) -> Result<Vec<Vec<Keypoint>>> {
    let cfg = profiles
        .first()
        .map(|p| p.scale_space)
        .ok_or_else(|| Error::InvalidParameter("no detector profiles".into()))?;
    for p in profiles {
        p.validate()?;
        if p.scale_space != cfg {
            return Err(Error::InvalidParameter("detector variants must share one scale-space".into()));
        }
    }
    let seed = Seed::new(image, &cfg)?;
    let dog = crate::dog::build_dog_from_seed(&seed);
    Ok(profiles.iter().map(|p| detect_on_dog(&dog, p)).collect())
}

/// Detects on every series member and maps the results to the base frame.
/// Returns `[member][variant]`.
pub(crate) fn detect_series(series: &Series, profiles: &[DetectorProfile]) -> Result<Vec<Vec<Vec<Keypoint>>>> {
    let idx: Vec<usize> = (0..series.len()).collect();
    parallel::map(&idx, |&i| {
        let found = detect_variants(&series.images[i], profiles)?;
        Ok(found
            .iter()
            .map(|kps| series.shots[i].to_common_frame(kps))
            .collect())
    })
    .into_iter()
    .collect()
}

pub(crate) fn camera_for(spec: &ExperimentSpec) -> Result<Camera> {
    Ok(Camera::new(&spec.reference.load()?))
}

/// Writes `name` under the spec's output directory, if any.
pub(crate) fn emit<F>(spec: &ExperimentSpec, name: &str, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
{
    let Some(dir) = &spec.out_dir else {
        return Ok(());
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    write(&mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(&path, e))
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Runs the experiment named by `spec.kind`, writing its CSVs.
pub fn run(spec: &ExperimentSpec) -> Result<()> {
    spec.validate()?;
    match spec.kind {
        ExperimentKind::Semigroup => run_semigroup(spec).map(drop),
        ExperimentKind::SamplingGrid => run_sampling_grid(spec).map(drop),
        ExperimentKind::SamplingStability => run_sampling_stability(spec).map(drop),
        ExperimentKind::FeatureRoc => run_feature_roc(spec).map(drop),
        ExperimentKind::RefinementStudy => run_refinement_study(spec).map(drop),
        ExperimentKind::KappaStudy => run_kappa_study(spec).map(drop),
        ExperimentKind::Aliasing | ExperimentKind::WrongBlur | ExperimentKind::Noise => {
            run_perturbation_study(spec).map(drop)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_sampling_values() {
        let k = 2f64.powf(1.0 / 3.0);
        assert!((balanced_delta_min(3, 0.8, k) - 0.37050).abs() < 1e-4);
        assert!((balanced_delta_min(15, 1.1, k) - 0.09270).abs() < 1e-4);
        let seq: Vec<f64> = [1, 2, 4, 8, 64, 1024, 1 << 20].iter().map(|&n| balanced_delta_min(n, 1.1, k)).collect();
        assert!(seq.windows(2).all(|w| w[1] < w[0]));
        assert!(*seq.last().unwrap() < 1e-5);
    }

    #[test]
    fn spec_round_trip_and_validation() {
        for kind in ExperimentKind::ALL {
            let spec = ExperimentSpec::new(kind);
            spec.validate().unwrap();
            let text = toml::to_string(&spec).unwrap();
            assert_eq!(ExperimentSpec::from_toml(&text).unwrap(), spec, "{}", kind.name());
            assert_eq!(kind.name().parse::<ExperimentKind>().unwrap(), kind);
        }
        let mut bad = ExperimentSpec::new(ExperimentKind::Aliasing);
        bad.grid.c.clear();
        assert!(bad.validate().unwrap_err().is_config_error());
        assert!(ExperimentSpec::from_toml("kind = \"aliasing\"\nbogus = 1\n").is_err());
        assert!(ExperimentSpec::from_toml("kind = \"nope\"\n").is_err());
    }

    #[test]
    fn minimal_toml() {
        let spec = ExperimentSpec::from_toml(
            "kind = \"refinement_study\"\nseed = 4\n[grid]\nm_offset = [0.6, inf]\nn_interp = [2, 1000000]\n",
        )
        .unwrap();
        assert_eq!(spec.grid.m_offset[1], f64::INFINITY);
        assert_eq!(spec.seed, 4);
        let grid = ExperimentSpec::from_toml_for(Some(ExperimentKind::SamplingGrid), "seed = 2\n").unwrap();
        assert_eq!(grid.grid.n_spo, ExperimentSpec::new(ExperimentKind::SamplingGrid).grid.n_spo);
        let nested = ExperimentSpec::from_toml("kind = \"noise\"\n[detector.scale_space]\nn_oct = 3\n").unwrap();
        assert_eq!(nested.detector.scale_space.n_oct, 3);
        assert_eq!(nested.detector.scale_space.n_spo, 15);
        assert!(ExperimentSpec::from_toml_for(Some(ExperimentKind::Noise), "kind = \"aliasing\"\n").is_err());
        assert!(ExperimentSpec::from_toml("seed = 1\n").is_err());
    }

    #[test]
    fn median_and_cv() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert!((coefficient_of_variation(&[1.0, 3.0]) - 0.5).abs() < 1e-15);
    }
}
