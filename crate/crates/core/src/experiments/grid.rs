use crate::camera::AcquisitionSpec;
use crate::dog::build_dog;
use crate::error::Result;
use crate::extrema::{compute_features, detect_on_dog, scan_discrete_extrema, DetectorProfile};
use crate::matching::{boundary_filter, unique_set};
use crate::parallel;
use crate::scalespace::ScaleSpaceConfig;

use super::{balanced_delta_min, camera_for, coefficient_of_variation, emit, fmt_opt, median, ExperimentSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub n_spo: usize,
    pub delta_min: f64,
    /// `delta_min` over the balanced step for this `n_spo`.
    pub balance_ratio: f64,
    /// Discrete 3D extrema.
    pub raw: usize,
    /// Refined keypoints at or above the boundary scale.
    pub boundary: usize,
    /// Unique keypoints among those.
    pub unique: usize,
    /// Median Hessian condition number over the discrete extrema.
    pub median_cond: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGridResult {
    pub cells: Vec<GridCell>,
}

impl SamplingGridResult {
    pub fn cv_raw(&self) -> f64 {
        coefficient_of_variation(&self.cells.iter().map(|c| c.raw as f64).collect::<Vec<_>>())
    }

    pub fn cv_compensated(&self) -> f64 {
        coefficient_of_variation(&self.cells.iter().map(|c| c.unique as f64).collect::<Vec<_>>())
    }
}

/// Counts detections of one simulated image over a `(n_spo, delta_min)`
/// grid.
pub fn run_sampling_grid(spec: &ExperimentSpec) -> Result<SamplingGridResult> {
    spec.validate()?;
    let cam = camera_for(spec)?;
    let a = &spec.acquisition;
    let image = cam.snapshot(&AcquisitionSpec {
        noise_sigma: a.noise_sigma,
        seed: spec.seed,
        ..AcquisitionSpec::new(a.c, a.s_factor)
    })?;
    let base = spec.detector.scale_space;
    let pairs: Vec<(usize, f64)> = spec
        .grid
        .n_spo
        .iter()
        .flat_map(|&n| spec.grid.delta_min.iter().map(move |&d| (n, d)))
        .collect();
    let cells = parallel::map(&pairs, |&(n_spo, delta_min)| -> Result<GridCell> {
        let cfg = ScaleSpaceConfig { n_spo, delta_min, ..base };
        let profile = DetectorProfile { scale_space: cfg, ..spec.detector };
        let dog = build_dog(&image, &cfg)?;
        let discrete = scan_discrete_extrema(&dog);
        let conds: Vec<f64> = discrete
            .iter()
            .map(|k| compute_features(k, &dog).features.hessian_cond)
            .collect();
        let refined = boundary_filter(&detect_on_dog(&dog, &profile), cfg.sigma_min);
        Ok(GridCell {
            n_spo,
            delta_min,
            balance_ratio: delta_min / balanced_delta_min(n_spo, cfg.sigma_min, cfg.kappa),
            raw: discrete.len(),
            boundary: refined.len(),
            unique: unique_set(&refined, &spec.tolerance).len(),
            median_cond: median(&conds),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let result = SamplingGridResult { cells };
    emit(spec, "sampling_grid.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n_spo", "delta_min", "balance_ratio", "raw", "boundary", "unique", "median_cond"])?;
        for c in &result.cells {
            out.write_record([
                c.n_spo.to_string(),
                format!("{}", c.delta_min),
                format!("{:.6}", c.balance_ratio),
                c.raw.to_string(),
                c.boundary.to_string(),
                c.unique.to_string(),
                fmt_opt(c.median_cond),
            ])?;
        }
        Ok(out.flush().map_err(|e| crate::Error::Csv(e.into()))?)
    })?;
    Ok(result)
}
