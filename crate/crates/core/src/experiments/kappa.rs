use crate::camera::AcquisitionSpec;
use crate::error::Result;
use crate::extrema::DetectorProfile;
use crate::keypoint::Keypoint;
use crate::matching::{normalize_scale_kappa_in_range, occurrence_matrix_labeled, unique_set, OccurrenceMatrix};
use crate::parallel;
use crate::scalespace::ScaleSpaceConfig;

use super::{balanced_config, camera_for, detect_variants, emit, median, ExperimentSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct KappaResult {
    pub kappas: Vec<f64>,
    /// All detections per ratio.
    pub raw_counts: Vec<usize>,
    /// Normalized detections inside the common scale range per ratio.
    pub counts: Vec<usize>,
    pub sets: Vec<Vec<Keypoint>>,
    pub matrix: OccurrenceMatrix,
}

impl KappaResult {
    /// Largest relative deviation of `counts` from their median.
    pub fn max_count_deviation(&self) -> f64 {
        let c: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        let m = median(&c).unwrap_or(0.0);
        c.iter().map(|v| (v - m).abs() / m).fold(0.0, f64::max)
    }
}

fn single_row_matrix(label: &str, set: &[Keypoint], spec: &ExperimentSpec) -> OccurrenceMatrix {
    let columns = unique_set(set, &spec.tolerance);
    OccurrenceMatrix {
        rows: vec![label.to_string()],
        cells: vec![vec![true; columns.len()]],
        stability: vec![1.0; columns.len()],
        columns,
    }
}

/// Detections of one simulated image for DoG ratios `2^(1/k)`, compared
/// after scale normalization on the common scale range.
pub fn run_kappa_study(spec: &ExperimentSpec) -> Result<KappaResult> {
    spec.validate()?;
    let cam = camera_for(spec)?;
    let a = &spec.acquisition;
    let image = cam.snapshot(&AcquisitionSpec {
        noise_sigma: a.noise_sigma,
        seed: spec.seed,
        ..AcquisitionSpec::new(a.c, a.s_factor)
    })?;
    let base = spec.detector.scale_space;
    let mut exps = spec.grid.kappa_inv_exponent.clone();
    exps.sort_unstable_by(|a, b| b.cmp(a));
    exps.dedup();
    let kappas: Vec<f64> = exps.iter().map(|&k| 2f64.powf(1.0 / k as f64)).collect();
    let found = parallel::map(&kappas, |&kappa| -> Result<Vec<Keypoint>> {
        let cfg = balanced_config(&ScaleSpaceConfig { kappa, ..base }, base.n_spo);
        let profile = DetectorProfile { scale_space: cfg, ..spec.detector };
        Ok(detect_variants(&image, &[profile])?.remove(0))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let raw_counts = found.iter().map(|s| s.len()).collect();
    let sets: Vec<Vec<Keypoint>> = found
        .iter()
        .zip(&kappas)
        .map(|(s, &k)| normalize_scale_kappa_in_range(s, k, base.sigma_min))
        .collect();
    let counts: Vec<usize> = sets.iter().map(|s| s.len()).collect();
    let labels: Vec<String> = exps.iter().map(|k| format!("kappa=2^(1/{k})")).collect();
    let matrix = if sets.len() == 1 {
        single_row_matrix(&labels[0], &sets[0], spec)
    } else {
        occurrence_matrix_labeled(&sets, &labels, &spec.tolerance)?
    };
    emit(spec, "kappa_counts.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["kappa_inv_exponent", "kappa", "delta_min", "raw_count", "count"])?;
        for (i, k) in exps.iter().enumerate() {
            let cfg = balanced_config(&ScaleSpaceConfig { kappa: kappas[i], ..base }, base.n_spo);
            out.write_record([
                k.to_string(),
                format!("{:.10}", kappas[i]),
                format!("{:.8}", cfg.delta_min),
                found[i].len().to_string(),
                counts[i].to_string(),
            ])?;
        }
        Ok(out.flush().map_err(|e| crate::Error::Csv(e.into()))?)
    })?;
    emit(spec, "occurrence.csv", |w| matrix.write_csv(w))?;
    emit(spec, "stability.csv", |w| matrix.write_stability_csv(w))?;
    Ok(KappaResult {
        kappas,
        raw_counts,
        counts,
        sets,
        matrix,
    })
}
