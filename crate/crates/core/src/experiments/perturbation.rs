use crate::camera::{make_noise_series, make_translation_series, wrong_blur_series, Series};
use crate::error::Result;
use crate::extrema::DetectorProfile;
use crate::keypoint::Keypoint;
use crate::matching::{boundary_filter, stability_and_precision, write_curves_csv, StabilityReport};
use crate::scalespace::ScaleSpaceConfig;

use super::{balanced_config, camera_for, detect_series, emit, fmt_opt, ExperimentKind, ExperimentSpec};

/// Presence threshold of the scale-band summary.
pub const BAND_PRESENCE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRow {
    /// Camera blur, blur error half-width or noise level.
    pub param: f64,
    pub mean_count: f64,
    pub report: StabilityReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandRow {
    pub param: f64,
    pub sigma_min: f64,
    /// Mean detections with scale in `[sigma_min, 2 sigma_min)`.
    pub mean_count: f64,
    pub unique: usize,
    /// Fraction of unique band keypoints present in at least 70% of images.
    pub fraction70: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationResult {
    pub kind: ExperimentKind,
    pub rows: Vec<PerturbationRow>,
    pub bands: Vec<BandRow>,
}

impl PerturbationResult {
    pub fn row(&self, param: f64) -> Option<&PerturbationRow> {
        self.rows.iter().find(|r| r.param == param)
    }

    pub fn band(&self, param: f64, sigma_min: f64) -> Option<&BandRow> {
        self.bands.iter().find(|b| b.param == param && b.sigma_min == sigma_min)
    }
}

fn mean_count(sets: &[Vec<Keypoint>]) -> f64 {
    sets.iter().map(|s| s.len() as f64).sum::<f64>() / sets.len() as f64
}

fn profile(spec: &ExperimentSpec, c: f64, sigma_min: f64) -> DetectorProfile {
    let base = ScaleSpaceConfig {
        c,
        sigma_min,
        n_oct: spec.grid.n_oct,
        ..spec.detector.scale_space
    };
    DetectorProfile {
        scale_space: balanced_config(&base, base.n_spo),
        ..spec.detector
    }
}

fn series_sets(series: &Series, profile: DetectorProfile) -> Result<Vec<Vec<Keypoint>>> {
    let sigma_min = profile.scale_space.sigma_min;
    Ok(detect_series(series, &[profile])?
        .into_iter()
        .map(|per| boundary_filter(&per[0], sigma_min))
        .collect())
}

fn band(spec: &ExperimentSpec, sets: &[Vec<Keypoint>], param: f64, sigma_min: f64) -> Result<BandRow> {
    let sets: Vec<Vec<Keypoint>> = sets
        .iter()
        .map(|s| s.iter().filter(|k| k.sigma >= sigma_min && k.sigma < 2.0 * sigma_min).copied().collect())
        .collect();
    let report = stability_and_precision(&sets, &spec.tolerance, 0.5)?;
    Ok(BandRow {
        param,
        sigma_min,
        mean_count: mean_count(&sets),
        unique: report.uniques.len(),
        fraction70: report.fraction_in_band(sigma_min, 2.0 * sigma_min, BAND_PRESENCE),
    })
}

/// Detections at the base `sigma_min` plus one band row per listed
/// `sigma_min`, sharing the base detections when the values coincide.
fn row_and_bands(
    spec: &ExperimentSpec,
    series: &Series,
    c: f64,
    param: f64,
    bands: &mut Vec<BandRow>,
) -> Result<Vec<Vec<Keypoint>>> {
    let base = spec.detector.scale_space.sigma_min;
    let sets = series_sets(series, profile(spec, c, base))?;
    for &s in &spec.grid.sigma_min {
        if s == base {
            bands.push(band(spec, &sets, param, s)?);
        } else {
            bands.push(band(spec, &series_sets(series, profile(spec, c, s))?, param, s)?);
        }
    }
    Ok(sets)
}

/// Stability of detections over series degraded by aliasing, a misjudged
/// camera blur, or noise, depending on `spec.kind`.
pub fn run_perturbation_study(spec: &ExperimentSpec) -> Result<PerturbationResult> {
    spec.validate()?;
    let cam = camera_for(spec)?;
    let a = &spec.acquisition;
    let g = &spec.grid;
    let sigma_min = spec.detector.scale_space.sigma_min;
    let mut rows = Vec::new();
    let mut bands = Vec::new();
    let mut add_row = |param: f64, sets: Vec<Vec<Keypoint>>| -> Result<()> {
        rows.push(PerturbationRow {
            param,
            mean_count: mean_count(&sets),
            report: stability_and_precision(&sets, &spec.tolerance, 0.5)?,
        });
        Ok(())
    };
    match spec.kind {
        ExperimentKind::Aliasing => {
            for &c in &g.c {
                let series = make_translation_series(&cam, c, a.s_factor, a.noise_sigma, a.n_images, spec.seed)?;
                add_row(c, series_sets(&series, profile(spec, c, sigma_min.max(c)))?)?;
            }
        }
        ExperimentKind::WrongBlur => {
            for &dc in &g.delta_c {
                let series = wrong_blur_series(&cam, a.c, dc, a.n_images, a.s_factor, spec.seed)?;
                let sets = row_and_bands(spec, &series, a.c, dc, &mut bands)?;
                add_row(dc, sets)?;
            }
        }
        ExperimentKind::Noise => {
            for &noise in &g.noise_sigma {
                let series = make_noise_series(&cam, a.c, a.s_factor, noise, a.n_images, spec.seed)?;
                let sets = row_and_bands(spec, &series, a.c, noise, &mut bands)?;
                add_row(noise, sets)?;
            }
        }
        _ => {
            return Err(crate::Error::Config(format!(
                "{} is not a perturbation study",
                spec.kind.name()
            )))
        }
    }
    let param = match spec.kind {
        ExperimentKind::Aliasing => "c",
        ExperimentKind::WrongBlur => "delta_c",
        _ => "noise_sigma",
    };
    let labels: Vec<String> = rows.iter().map(|r| format!("{param}={}", r.param)).collect();
    let reports: Vec<&StabilityReport> = rows.iter().map(|r| &r.report).collect();
    emit(spec, "perturbation_curves.csv", |w| write_curves_csv(w, &labels, &reports))?;
    emit(spec, "perturbation_counts.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([param, "mean_count", "unique", "stable", "precision"])?;
        for r in &rows {
            out.write_record([
                format!("{}", r.param),
                format!("{:.3}", r.mean_count),
                r.report.uniques.len().to_string(),
                r.report.stable.len().to_string(),
                fmt_opt(r.report.precision),
            ])?;
        }
        Ok(out.flush().map_err(|e| crate::Error::Csv(e.into()))?)
    })?;
    if !bands.is_empty() {
        emit(spec, "bands.csv", |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record([param, "sigma_min", "mean_count", "unique", "fraction70"])?;
            for b in &bands {
                out.write_record([
                    format!("{}", b.param),
                    format!("{}", b.sigma_min),
                    format!("{:.3}", b.mean_count),
                    b.unique.to_string(),
                    fmt_opt(b.fraction70),
                ])?;
            }
            Ok(out.flush().map_err(|e| crate::Error::Csv(e.into()))?)
        })?;
    }
    Ok(PerturbationResult {
        kind: spec.kind,
        rows,
        bands,
    })
}
