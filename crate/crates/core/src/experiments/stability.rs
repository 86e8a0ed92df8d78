use crate::camera::AcquisitionSpec;
use crate::error::Result;
use crate::extrema::DetectorProfile;
use crate::keypoint::Keypoint;
use crate::matching::{boundary_filter, new_lost_rates, occurrence_matrix_labeled, write_rates_csv, OccurrenceMatrix};
use crate::parallel;
use crate::roc::{roc_curve, write_auc_csv, write_roc_csv, Orientation, RocCurve};

use super::{balanced_config, camera_for, detect_variants, emit, ExperimentSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingStabilityResult {
    pub n_spo: Vec<usize>,
    pub labels: Vec<String>,
    /// Boundary-filtered detections per sampling, coarse to fine.
    pub sets: Vec<Vec<Keypoint>>,
    pub matrix: OccurrenceMatrix,
    pub rates: Vec<(Option<f64>, Option<f64>)>,
}

impl SamplingStabilityResult {
    pub fn new_rates(&self) -> Vec<f64> {
        self.rates.iter().filter_map(|r| r.0).collect()
    }

    pub fn lost_rates(&self) -> Vec<f64> {
        self.rates.iter().filter_map(|r| r.1).collect()
    }
}

/// Detects one simulated image at balanced samplings of increasing
/// density and measures how detections appear and disappear.
pub fn run_sampling_stability(spec: &ExperimentSpec) -> Result<SamplingStabilityResult> {
    spec.validate()?;
    let cam = camera_for(spec)?;
    let a = &spec.acquisition;
    let image = cam.snapshot(&AcquisitionSpec {
        noise_sigma: a.noise_sigma,
        seed: spec.seed,
        ..AcquisitionSpec::new(a.c, a.s_factor)
    })?;
    let base = spec.detector.scale_space;
    let mut n_spo = spec.grid.n_spo.clone();
    n_spo.sort_unstable();
    n_spo.dedup();
    let sets = parallel::map(&n_spo, |&n| -> Result<Vec<Keypoint>> {
        let profile = DetectorProfile {
            scale_space: balanced_config(&base, n),
            ..spec.detector
        };
        let found = detect_variants(&image, &[profile])?.remove(0);
        Ok(boundary_filter(&found, base.sigma_min))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = n_spo.iter().map(|n| format!("n_spo={n}")).collect();
    let matrix = occurrence_matrix_labeled(&sets, &labels, &spec.tolerance)?;
    let rates = new_lost_rates(&sets, &spec.tolerance)?;
    emit(spec, "occurrence.csv", |w| matrix.write_csv(w))?;
    emit(spec, "stability.csv", |w| matrix.write_stability_csv(w))?;
    emit(spec, "rates.csv", |w| write_rates_csv(w, &labels, &rates))?;
    emit(spec, "counts.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n_spo", "delta_min", "count"])?;
        for (n, s) in n_spo.iter().zip(&sets) {
            out.write_record([
                n.to_string(),
                format!("{:.8}", balanced_config(&base, *n).delta_min),
                s.len().to_string(),
            ])?;
        }
        Ok(out.flush().map_err(|e| crate::Error::Csv(e.into()))?)
    })?;
    Ok(SamplingStabilityResult {
        n_spo,
        labels,
        sets,
        matrix,
        rates,
    })
}

/// Occurrence-rate bounds of the stable and unstable classes.
pub const STABLE_ABOVE: f64 = 0.8;
pub const UNSTABLE_BELOW: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRocResult {
    pub n_stable: usize,
    pub n_unstable: usize,
    pub curves: Vec<RocCurve>,
}

impl FeatureRocResult {
    pub fn auc(&self, name: &str) -> Option<f64> {
        self.curves.iter().find(|c| c.name == name).map(|c| c.auc)
    }
}

/// ROC sweeps of the four keypoint features over the stable / unstable
/// split of an occurrence matrix.
pub fn feature_roc(matrix: &OccurrenceMatrix) -> Result<FeatureRocResult> {
    let stable: Vec<&Keypoint> = matrix
        .columns
        .iter()
        .zip(&matrix.stability)
        .filter(|(_, &s)| s > STABLE_ABOVE)
        .map(|(k, _)| k)
        .collect();
    let unstable: Vec<&Keypoint> = matrix
        .columns
        .iter()
        .zip(&matrix.stability)
        .filter(|(_, &s)| s < UNSTABLE_BELOW)
        .map(|(k, _)| k)
        .collect();
    type Extract = fn(&Keypoint) -> f64;
    let features: [(&str, Extract, Orientation); 4] = [
        ("dog_abs", |k| k.features.dog_abs, Orientation::KeepHigh),
        ("laplacian3d", |k| k.features.laplacian3d.abs(), Orientation::KeepHigh),
        ("hessian_cond", |k| k.features.hessian_cond, Orientation::KeepLow),
        ("min_neighbor_gap", |k| k.features.min_neighbor_gap, Orientation::KeepHigh),
    ];
    let curves = features
        .iter()
        .map(|(name, f, o)| {
            let pos: Vec<f64> = stable.iter().map(|k| f(k)).collect();
            let neg: Vec<f64> = unstable.iter().map(|k| f(k)).collect();
            roc_curve(name, &pos, &neg, *o)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureRocResult {
        n_stable: stable.len(),
        n_unstable: unstable.len(),
        curves,
    })
}

pub fn run_feature_roc(spec: &ExperimentSpec) -> Result<(SamplingStabilityResult, FeatureRocResult)> {
    let st = run_sampling_stability(spec)?;
    let roc = feature_roc(&st.matrix)?;
    emit(spec, "roc.csv", |w| write_roc_csv(w, &roc.curves))?;
    emit(spec, "auc.csv", |w| write_auc_csv(w, &roc.curves))?;
    Ok((st, roc))
}
