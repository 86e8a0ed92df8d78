//! Threshold sweeps of a scalar feature separating two classes.

use std::cmp::Ordering;
use std::io::Write;

use crate::error::{Error, Result};

/// Number of quantile-spaced thresholds per sweep.
pub const N_THRESHOLDS: usize = 256;

/// Which side of the threshold a filter keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Keep `value >= t`.
    KeepHigh,
    /// Keep `value <= t`.
    KeepLow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    /// Fraction of positives kept.
    pub sensitivity: f64,
    /// Fraction of negatives removed.
    pub specificity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub name: String,
    pub orientation: Orientation,
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn keeps(o: Orientation, v: f64, t: f64) -> bool {
    match o {
        Orientation::KeepHigh => v >= t,
        Orientation::KeepLow => v <= t,
    }
}

/// `n` thresholds at evenly spaced quantiles of `values` (nearest rank).
pub fn quantile_thresholds(values: &[f64], n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    if v.is_empty() || n == 0 {
        return Vec::new();
    }
    let last = (v.len() - 1) as f64;
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let q = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            v[(q * last).round() as usize]
        })
        .collect();
    out.dedup();
    out
}

/// Probability that a random positive is kept before a random negative,
/// counting ties as one half.
pub fn auc_mann_whitney(positives: &[f64], negatives: &[f64], orientation: Orientation) -> f64 {
    let sign = match orientation {
        Orientation::KeepHigh => 1.0,
        Orientation::KeepLow => -1.0,
    };
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (sign * v, true))
        .chain(negatives.iter().map(|&v| (sign * v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // rank sum of the positives with midranks for ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0.partial_cmp(&all[i].0) == Some(Ordering::Equal) {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

/// Sweeps quantile thresholds over the pooled values of both classes.
pub fn roc_curve(name: &str, positives: &[f64], negatives: &[f64], orientation: Orientation) -> Result<RocCurve> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Numerical(format!(
            "degenerate class split for {name}: {} positives, {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    let pooled: Vec<f64> = positives.iter().chain(negatives).copied().collect();
    let points = quantile_thresholds(&pooled, N_THRESHOLDS)
        .into_iter()
        .map(|t| RocPoint {
            threshold: t,
            sensitivity: positives.iter().filter(|&&v| keeps(orientation, v, t)).count() as f64 / positives.len() as f64,
            specificity: negatives.iter().filter(|&&v| !keeps(orientation, v, t)).count() as f64 / negatives.len() as f64,
        })
        .collect();
    Ok(RocCurve {
        name: name.to_string(),
        orientation,
        points,
        auc: auc_mann_whitney(positives, negatives, orientation),
    })
}

impl RocCurve {
    /// Trapezoidal area over the swept points closed by `(0, 1)` and
    /// `(1, 0)`. Approximates `auc` from below the threshold resolution.
    pub fn trapezoid_auc(&self) -> f64 {
        let mut pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .map(|p| (1.0 - p.specificity, p.sensitivity))
            .collect();
        pts.push((0.0, 0.0));
        pts.push((1.0, 1.0));
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts.windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

/// Long-format CSV: `feature,threshold,sensitivity,specificity`.
pub fn write_roc_csv<W: Write>(out: W, curves: &[RocCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "threshold", "sensitivity", "specificity"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.name.clone(),
                format!("{:.8e}", p.threshold),
                format!("{:.6}", p.sensitivity),
                format!("{:.6}", p.specificity),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

pub fn write_auc_csv<W: Write>(out: W, curves: &[RocCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "auc"])?;
    for c in curves {
        w.write_record([c.name.clone(), format!("{:.6}", c.auc)])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}
