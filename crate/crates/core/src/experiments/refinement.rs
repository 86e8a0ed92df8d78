use crate::bspline::resampled_len;
use crate::camera::{make_translation_series, make_zoom_series, Series};
use crate::error::Result;
use crate::extrema::{DetectorProfile, UNLIMITED_INTERP};
use crate::keypoint::Keypoint;
use crate::matching::{boundary_scale, same_keypoint_sets, stability_and_precision, write_curves_csv, StabilityReport};
use crate::scalespace::{ScaleSpaceConfig, MIN_OCTAVE_SIZE};

use super::{balanced_config, camera_for, detect_series, emit, fmt_opt, ExperimentSpec, SeriesKind};

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementRow {
    pub n_spo: usize,
    /// `None` for the unrefined baseline.
    pub m_offset: Option<f64>,
    pub n_interp: Option<usize>,
    pub mean_count: f64,
    pub report: StabilityReport,
}

impl RefinementRow {
    pub fn label(&self) -> String {
        match (self.m_offset, self.n_interp) {
            (Some(m), Some(n)) => {
                let n = if n >= UNLIMITED_INTERP { "inf".to_string() } else { n.to_string() };
                format!("n{}_m{}_N{}", self.n_spo, m, n)
            }
            _ => format!("n{}_discrete", self.n_spo),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementResult {
    pub rows: Vec<RefinementRow>,
    /// `(n_spo, m_offset, identical)`: whether two and unbounded refinement
    /// attempts gave the same keypoints on every image.
    pub interp_identical: Vec<(usize, f64, bool)>,
}

impl RefinementResult {
    pub fn row(&self, n_spo: usize, m_offset: f64, n_interp: usize) -> Option<&RefinementRow> {
        self.rows
            .iter()
            .find(|r| r.n_spo == n_spo && r.m_offset == Some(m_offset) && r.n_interp == Some(n_interp))
    }

    pub fn discrete(&self, n_spo: usize) -> Option<&RefinementRow> {
        self.rows.iter().find(|r| r.n_spo == n_spo && r.m_offset.is_none())
    }
}

/// Octaves the detector can build on a `width x height` input.
fn octaves_for(width: usize, height: usize, cfg: &ScaleSpaceConfig) -> usize {
    let w = resampled_len(width, cfg.delta_min);
    let h = resampled_len(height, cfg.delta_min);
    (0..cfg.n_oct)
        .take_while(|&o| w.div_ceil(1 << o) >= MIN_OCTAVE_SIZE && h.div_ceil(1 << o) >= MIN_OCTAVE_SIZE)
        .count()
}

fn restrict(sets: Vec<Vec<Keypoint>>, lo: f64, hi: f64) -> Vec<Vec<Keypoint>> {
    sets.into_iter()
        .map(|s| s.into_iter().filter(|k| k.sigma >= lo && k.sigma <= hi).collect())
        .collect()
}

/// Stability and precision of detections over a translation or zoom series
/// for every refinement setting of the grid, plus the unrefined baseline.
pub fn run_refinement_study(spec: &ExperimentSpec) -> Result<RefinementResult> {
    spec.validate()?;
    let cam = camera_for(spec)?;
    let a = &spec.acquisition;
    let g = &spec.grid;
    let series: Series = match g.series {
        SeriesKind::Translation => make_translation_series(&cam, a.c, a.s_factor, a.noise_sigma, a.n_images, spec.seed)?,
        SeriesKind::Zoom => make_zoom_series(&cam, a.c, a.s_factor, &g.zoom, spec.seed)?,
    };
    let base = spec.detector.scale_space;
    let mut rows = Vec::new();
    let mut interp_identical = Vec::new();
    for &n_spo in &g.n_spo {
        let cfg = balanced_config(&base, n_spo);
        let mut profiles = vec![DetectorProfile {
            scale_space: cfg,
            refine: false,
            ..spec.detector
        }];
        let mut keys = vec![(None, None)];
        for &m in &g.m_offset {
            for &n in &g.n_interp {
                profiles.push(DetectorProfile {
                    scale_space: cfg,
                    refine: true,
                    m_offset: m,
                    n_interp: n,
                    ..spec.detector
                });
                keys.push((Some(m), Some(n)));
            }
        }
        let found = detect_series(&series, &profiles)?;
        let range = if g.series == SeriesKind::Zoom {
            let n_oct = series
                .images
                .iter()
                .map(|im| octaves_for(im.width(), im.height(), &cfg))
                .min()
                .unwrap_or(1);
            series.common_scale_range(boundary_scale(cfg.sigma_min), cfg.sigma(n_oct.saturating_sub(1), n_spo as f64))
        } else {
            (boundary_scale(cfg.sigma_min), f64::INFINITY)
        };
        for (v, &(m, n)) in keys.iter().enumerate() {
            let sets: Vec<Vec<Keypoint>> = found.iter().map(|per| per[v].clone()).collect();
            let sets = restrict(sets, range.0, range.1);
            let mean_count = sets.iter().map(|s| s.len() as f64).sum::<f64>() / sets.len() as f64;
            rows.push(RefinementRow {
                n_spo,
                m_offset: m,
                n_interp: n,
                mean_count,
                report: stability_and_precision(&sets, &spec.tolerance, 0.5)?,
            });
        }
        if let (Some(i2), Some(iu)) = (
            keys.iter().position(|k| k.1 == Some(2)),
            keys.iter().position(|k| k.1 == Some(UNLIMITED_INTERP)),
        ) {
            for &m in &g.m_offset {
                let v2 = keys.iter().position(|k| *k == (Some(m), Some(2))).unwrap_or(i2);
                let vu = keys
                    .iter()
                    .position(|k| *k == (Some(m), Some(UNLIMITED_INTERP)))
                    .unwrap_or(iu);
                let same = found.iter().all(|per| same_keypoint_sets(&per[v2], &per[vu]));
                interp_identical.push((n_spo, m, same));
            }
        }
    }
    let labels: Vec<String> = rows.iter().map(|r| r.label()).collect();
    let reports: Vec<&StabilityReport> = rows.iter().map(|r| &r.report).collect();
    emit(spec, "refinement_curves.csv", |w| write_curves_csv(w, &labels, &reports))?;
    emit(spec, "refinement_precision.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n_spo", "m_offset", "n_interp", "mean_count", "unique", "stable", "precision"])?;
        for r in &rows {
            out.write_record([
                r.n_spo.to_string(),
                r.m_offset.map(|m| format!("{m}")).unwrap_or_else(|| "discrete".into()),
                r.n_interp
                    .map(|n| if n >= UNLIMITED_INTERP { "inf".into() } else { n.to_string() })
                    .unwrap_or_default(),
                format!("{:.3}", r.mean_count),
                r.report.uniques.len().to_string(),
                r.report.stable.len().to_string(),
                fmt_opt(r.report.precision),
            ])?;
        }
        Ok(out.flush().map_err(|e| crate::Error::Csv(e.into()))?)
    })?;
    Ok(RefinementResult { rows, interp_identical })
}
