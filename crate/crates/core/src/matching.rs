//! Comparing detection sets: the duplicate criterion, unique sets,
//! occurrence matrices, new/lost rates and translation precision.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoint::{sort_canonical, Keypoint};
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchTolerance {
    /// Sup-norm spatial tolerance, input pixels.
    pub epsilon: f64,
    /// Scale ratio tolerance.
    pub ratio_r: f64,
}

impl Default for MatchTolerance {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            ratio_r: std::f64::consts::SQRT_2,
        }
    }
}

impl MatchTolerance {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.ratio_r >= 1.0 && self.ratio_r.is_finite()) {
            return Err(Error::Config(format!("ratio_r must be >= 1, got {}", self.ratio_r)));
        }
        Ok(())
    }
}

/// Inclusive duplicate test: `|dx|, |dy| <= epsilon` and
/// `max(sigma) <= ratio_r * min(sigma)`.
pub fn same_detection(a: &Keypoint, b: &Keypoint, tol: &MatchTolerance) -> bool {
    (a.x - b.x).abs() <= tol.epsilon
        && (a.y - b.y).abs() <= tol.epsilon
        && a.sigma.max(b.sigma) <= tol.ratio_r * a.sigma.min(b.sigma)
}

/// Uniform grid over keypoint positions with cell size `epsilon`, so every
/// candidate duplicate lies in the 3x3 block around a query.
pub struct GridIndex<'a> {
    points: &'a [Keypoint],
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Keypoint], tol: &MatchTolerance) -> Self {
        let cell = tol.epsilon.max(1e-9);
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(cell, p)).or_default().push(i);
        }
        Self { points, cell, cells }
    }

    fn key(cell: f64, p: &Keypoint) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Indices of all points that are duplicates of `q`, ascending.
    pub fn matches(&self, q: &Keypoint, tol: &MatchTolerance) -> Vec<usize> {
        let (cx, cy) = Self::key(self.cell, q);
        let mut out = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(ids) = self.cells.get(&(cx + dx, cy + dy)) {
                    out.extend(ids.iter().copied().filter(|&i| same_detection(q, &self.points[i], tol)));
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn has_match(&self, q: &Keypoint, tol: &MatchTolerance) -> bool {
        let (cx, cy) = Self::key(self.cell, q);
        (-1..=1).any(|dy| {
            (-1..=1).any(|dx| {
                self.cells
                    .get(&(cx + dx, cy + dy))
                    .is_some_and(|ids| ids.iter().any(|&i| same_detection(q, &self.points[i], tol)))
            })
        })
    }
}

/// Connected components of the duplicate graph beyond which the exact cover
/// search gives way to the greedy one.
pub const EXACT_COVER_LIMIT: usize = 20;

/// Smallest set of detections whose duplicate neighborhoods cover the input.
///
/// Components of the duplicate graph with at most `EXACT_COVER_LIMIT` nodes
/// are solved exactly; larger ones use greedy max-coverage with ties broken
/// by canonical order. Output is in canonical order.
pub fn unique_set(detections: &[Keypoint], tol: &MatchTolerance) -> Vec<Keypoint> {
    let mut pts = detections.to_vec();
    sort_canonical(&mut pts);
    let index = GridIndex::new(&pts, tol);
    let adj: Vec<Vec<usize>> = parallel::map(&pts, |p| index.matches(p, tol));

    let mut comp = vec![usize::MAX; pts.len()];
    let mut components = Vec::new();
    for start in 0..pts.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut head = 0;
        while head < members.len() {
            let v = members[head];
            head += 1;
            for &u in &adj[v] {
                if comp[u] == usize::MAX {
                    comp[u] = id;
                    members.push(u);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }

    let chosen = parallel::map(&components, |members| {
        if members.len() <= EXACT_COVER_LIMIT {
            exact_cover(members, &adj)
        } else {
            greedy_cover(members, &adj)
        }
    });
    let mut out: Vec<Keypoint> = chosen.into_iter().flatten().map(|i| pts[i]).collect();
    sort_canonical(&mut out);
    out
}

fn greedy_cover(members: &[usize], adj: &[Vec<usize>]) -> Vec<usize> {
    let mut covered: HashMap<usize, bool> = members.iter().map(|&m| (m, false)).collect();
    let gain = |v: usize, covered: &HashMap<usize, bool>| adj[v].iter().filter(|u| !covered[u]).count();
    let mut heap: BinaryHeap<(usize, Reverse<usize>)> =
        members.iter().map(|&v| (adj[v].len(), Reverse(v))).collect();
    let mut remaining = members.len();
    let mut chosen = Vec::new();
    while remaining > 0 {
        let (g, Reverse(v)) = heap.pop().expect("cover exhausted");
        let now = gain(v, &covered);
        if now != g {
            if now > 0 {
                heap.push((now, Reverse(v)));
            }
            continue;
        }
        chosen.push(v);
        for u in &adj[v] {
            let c = covered.get_mut(u).expect("neighbor outside component");
            if !*c {
                *c = true;
                remaining -= 1;
            }
        }
    }
    chosen
}

fn exact_cover(members: &[usize], adj: &[Vec<usize>]) -> Vec<usize> {
    let k = members.len();
    let local: HashMap<usize, usize> = members.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    let masks: Vec<u32> = members
        .iter()
        .map(|&m| adj[m].iter().fold(0u32, |acc, u| acc | 1 << local[u]))
        .collect();
    let full: u32 = if k == 32 { u32::MAX } else { (1u32 << k) - 1 };
    // candidates able to cover each element, ascending
    let coverers: Vec<Vec<usize>> = (0..k)
        .map(|e| (0..k).filter(|&c| masks[c] >> e & 1 == 1).collect())
        .collect();

    let mut best = greedy_cover(members, adj)
        .into_iter()
        .map(|m| local[&m])
        .collect::<Vec<_>>();
    best.sort_unstable();
    let mut stack = Vec::new();
    search(0, full, &masks, &coverers, &mut stack, &mut best);
    best.into_iter().map(|i| members[i]).collect()
}

fn search(covered: u32, full: u32, masks: &[u32], coverers: &[Vec<usize>], stack: &mut Vec<usize>, best: &mut Vec<usize>) {
    if covered == full {
        let mut cand = stack.clone();
        cand.sort_unstable();
        if cand.len() < best.len() || (cand.len() == best.len() && cand < *best) {
            *best = cand;
        }
        return;
    }
    if stack.len() + 1 > best.len() {
        return;
    }
    // branch on the uncovered element with the fewest coverers
    let e = (0..masks.len())
        .filter(|&e| covered >> e & 1 == 0)
        .min_by_key(|&e| (coverers[e].len(), e))
        .expect("uncovered element");
    for &c in &coverers[e] {
        stack.push(c);
        search(covered | masks[c], full, masks, coverers, stack, best);
        stack.pop();
    }
}

/// Smallest scale kept after compensating for the missing lower neighbor of
/// the first DoG slice.
pub fn boundary_scale(sigma_min: f64) -> f64 {
    sigma_min * 2f64.powf(1.0 / 3.0)
}

pub fn boundary_filter(detections: &[Keypoint], sigma_min: f64) -> Vec<Keypoint> {
    let lo = boundary_scale(sigma_min);
    detections.iter().filter(|k| k.sigma >= lo).copied().collect()
}

/// Scales `sigma` by `sqrt(kappa)` so detections from different ratios
/// become comparable.
pub fn normalize_scale_kappa(detections: &[Keypoint], kappa: f64) -> Vec<Keypoint> {
    let f = kappa.sqrt();
    detections
        .iter()
        .map(|k| Keypoint { sigma: k.sigma * f, ..*k })
        .collect()
}

/// Normalized scale range covered by every ratio in `[2^(1/30), 2^(1/2)]`.
pub fn common_scale_range(sigma_min: f64) -> (f64, f64) {
    (sigma_min * 2f64.powf(0.25), 2.0 * sigma_min * 2f64.powf(1.0 / 60.0))
}

/// `normalize_scale_kappa` followed by the common-range filter.
pub fn normalize_scale_kappa_in_range(detections: &[Keypoint], kappa: f64, sigma_min: f64) -> Vec<Keypoint> {
    let (lo, hi) = common_scale_range(sigma_min);
    normalize_scale_kappa(detections, kappa)
        .into_iter()
        .filter(|k| k.sigma >= lo && k.sigma <= hi)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccurrenceMatrix {
    pub rows: Vec<String>,
    /// Unique keypoints, one per column, in ascending stability.
    pub columns: Vec<Keypoint>,
    /// `cells[row][col]`.
    pub cells: Vec<Vec<bool>>,
    pub stability: Vec<f64>,
}

impl OccurrenceMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// Fraction of columns whose stability is at least `p`.
    pub fn fraction_at_least(&self, p: f64) -> f64 {
        if self.columns.is_empty() {
            return 0.0;
        }
        let n = self.n_rows() as f64;
        let count = self
            .cells_per_column()
            .filter(|&c| c as f64 >= p * n - 1e-9)
            .count();
        count as f64 / self.n_cols() as f64
    }

    pub fn fraction_always_present(&self) -> f64 {
        self.fraction_at_least(1.0)
    }

    fn cells_per_column(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_cols()).map(|j| self.cells.iter().filter(|r| r[j]).count())
    }

    /// `label,k0,k1,...` header then one 0/1 row per configuration.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["config".to_string()];
        header.extend((0..self.n_cols()).map(|j| format!("k{j}")));
        w.write_record(&header)?;
        for (label, row) in self.rows.iter().zip(&self.cells) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|&c| if c { "1" } else { "0" }.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))
    }

    pub fn write_stability_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "x", "y", "sigma", "stability"])?;
        for (j, (k, s)) in self.columns.iter().zip(&self.stability).enumerate() {
            w.write_record([
                format!("k{j}"),
                format!("{:.8e}", k.x),
                format!("{:.8e}", k.y),
                format!("{:.8e}", k.sigma),
                format!("{s:.6}"),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))
    }
}

/// Pools the sets, extracts the unique set, and marks each `(set, unique)`
/// pair for which the set contains a duplicate of the unique keypoint.
pub fn occurrence_matrix(sets: &[Vec<Keypoint>], tol: &MatchTolerance) -> Result<OccurrenceMatrix> {
    let labels: Vec<String> = (0..sets.len()).map(|i| i.to_string()).collect();
    occurrence_matrix_labeled(sets, &labels, tol)
}

pub fn occurrence_matrix_labeled(sets: &[Vec<Keypoint>], labels: &[String], tol: &MatchTolerance) -> Result<OccurrenceMatrix> {
    if sets.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "occurrence matrix needs at least 2 detection sets, got {}",
            sets.len()
        )));
    }
    if labels.len() != sets.len() {
        return Err(Error::InvalidParameter("one label per detection set required".into()));
    }
    let pool: Vec<Keypoint> = sets.iter().flatten().copied().collect();
    let uniques = unique_set(&pool, tol);
    let rows: Vec<Vec<bool>> = parallel::map(sets, |set| {
        let index = GridIndex::new(set, tol);
        uniques.iter().map(|u| index.has_match(u, tol)).collect()
    });
    let n = sets.len() as f64;
    let stab: Vec<f64> = (0..uniques.len())
        .map(|j| rows.iter().filter(|r| r[j]).count() as f64 / n)
        .collect();
    let mut order: Vec<usize> = (0..uniques.len()).collect();
    order.sort_by(|&a, &b| stab[a].total_cmp(&stab[b]).then(a.cmp(&b)));
    Ok(OccurrenceMatrix {
        rows: labels.to_vec(),
        columns: order.iter().map(|&j| uniques[j]).collect(),
        cells: rows
            .iter()
            .map(|r| order.iter().map(|&j| r[j]).collect())
            .collect(),
        stability: order.iter().map(|&j| stab[j]).collect(),
    })
}

/// Fraction of `a` without a duplicate in `b`; `None` for an empty `a`.
fn unmatched_fraction(a: &[Keypoint], b: &[Keypoint], tol: &MatchTolerance) -> Option<f64> {
    if a.is_empty() {
        return None;
    }
    let index = GridIndex::new(b, tol);
    let lost = a.iter().filter(|k| !index.has_match(k, tol)).count();
    Some(lost as f64 / a.len() as f64)
}

/// `(new_rate, lost_rate)` per set: detections of `D_i` absent from
/// `D_{i-1}` and from `D_{i+1}` respectively. Endpoints are `None`.
pub fn new_lost_rates(sets: &[Vec<Keypoint>], tol: &MatchTolerance) -> Result<Vec<(Option<f64>, Option<f64>)>> {
    if sets.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "new/lost rates need at least 2 detection sets, got {}",
            sets.len()
        )));
    }
    let idx: Vec<usize> = (0..sets.len()).collect();
    Ok(parallel::map(&idx, |&i| {
        let new = (i > 0).then(|| unmatched_fraction(&sets[i], &sets[i - 1], tol)).flatten();
        let lost = (i + 1 < sets.len())
            .then(|| unmatched_fraction(&sets[i], &sets[i + 1], tol))
            .flatten();
        (new, lost)
    }))
}

pub fn write_rates_csv<W: Write>(out: W, labels: &[String], rates: &[(Option<f64>, Option<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["config", "new_rate", "lost_rate"])?;
    let f = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for (l, (n, lo)) in labels.iter().zip(rates) {
        w.write_record([l.clone(), f(*n), f(*lo)])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

/// Presence thresholds of the stability curve, percent.
pub const PRESENCE_GRID: [u32; 20] = [5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80, 85, 90, 95, 100];

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub uniques: Vec<Keypoint>,
    /// Number of sets each unique keypoint was matched in.
    pub hits: Vec<usize>,
    pub n_sets: usize,
    /// Indices into `uniques` of keypoints meeting the presence threshold.
    pub stable: Vec<usize>,
    /// Mean positional standard deviation over stable keypoints.
    pub precision: Option<f64>,
    /// `(p, percentage of uniques present in at least p% of the sets)`.
    pub curve: Vec<(u32, f64)>,
}

impl StabilityReport {
    pub fn presence(&self, j: usize) -> f64 {
        self.hits[j] as f64 / self.n_sets as f64
    }

    pub fn curve_at(&self, p: u32) -> Option<f64> {
        self.curve.iter().find(|(q, _)| *q == p).map(|(_, v)| *v)
    }

    /// Fraction of uniques with `sigma` in `[lo, hi)` present in at least
    /// `p` of the sets; `None` when the band is empty.
    pub fn fraction_in_band(&self, lo: f64, hi: f64, p: f64) -> Option<f64> {
        let band: Vec<usize> = (0..self.uniques.len())
            .filter(|&j| self.uniques[j].sigma >= lo && self.uniques[j].sigma < hi)
            .collect();
        if band.is_empty() {
            return None;
        }
        let n = band.iter().filter(|&&j| self.hits[j] as f64 >= p * self.n_sets as f64 - 1e-9).count();
        Some(n as f64 / band.len() as f64)
    }

    pub fn write_curve_csv<W: Write>(&self, out: W) -> Result<()> {
        write_curves_csv(out, &["percentage".to_string()], &[self])
    }
}

/// Several stability curves side by side: `p,<label>...`.
pub fn write_curves_csv<W: Write>(out: W, labels: &[String], reports: &[&StabilityReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["p".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (i, p) in PRESENCE_GRID.iter().enumerate() {
        let mut rec = vec![p.to_string()];
        rec.extend(reports.iter().map(|r| format!("{:.6}", r.curve[i].1)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

/// One-to-one matching of `uniques` against `set`: candidate pairs are
/// accepted nearest first. Returns, per unique, the matched index in `set`.
pub fn greedy_match(uniques: &[Keypoint], set: &[Keypoint], tol: &MatchTolerance) -> Vec<Option<usize>> {
    let index = GridIndex::new(set, tol);
    let mut pairs: Vec<(f64, f64, usize, usize)> = Vec::new();
    for (j, u) in uniques.iter().enumerate() {
        for d in index.matches(u, tol) {
            let k = &set[d];
            let dist = (u.x - k.x).hypot(u.y - k.y);
            let dscale = (u.sigma / k.sigma).ln().abs();
            pairs.push((dist, dscale, j, d));
        }
    }
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    let mut out = vec![None; uniques.len()];
    let mut used = vec![false; set.len()];
    for (_, _, j, d) in pairs {
        if out[j].is_none() && !used[d] {
            out[j] = Some(d);
            used[d] = true;
        }
    }
    out
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Presence, stability curve and positional precision of the unique
/// keypoints of the pooled sets. Sets must share one reference frame.
pub fn stability_and_precision(sets: &[Vec<Keypoint>], tol: &MatchTolerance, presence_threshold: f64) -> Result<StabilityReport> {
    if sets.is_empty() {
        return Err(Error::InvalidParameter("no detection sets".into()));
    }
    if !(0.0..=1.0).contains(&presence_threshold) {
        return Err(Error::InvalidParameter(format!(
            "presence threshold must lie in [0, 1], got {presence_threshold}"
        )));
    }
    let pool: Vec<Keypoint> = sets.iter().flatten().copied().collect();
    let uniques = unique_set(&pool, tol);
    let matches: Vec<Vec<Option<usize>>> = parallel::map(sets, |set| greedy_match(&uniques, set, tol));
    let n_sets = sets.len();
    let hits: Vec<usize> = (0..uniques.len())
        .map(|j| matches.iter().filter(|m| m[j].is_some()).count())
        .collect();
    let stable: Vec<usize> = (0..uniques.len())
        .filter(|&j| hits[j] as f64 >= presence_threshold * n_sets as f64 - 1e-9)
        .filter(|&j| hits[j] > 0)
        .collect();
    let precision = (!stable.is_empty()).then(|| {
        let total: f64 = stable
            .iter()
            .map(|&j| {
                let (xs, ys): (Vec<f64>, Vec<f64>) = matches
                    .iter()
                    .zip(sets)
                    .filter_map(|(m, set)| m[j].map(|d| (set[d].x, set[d].y)))
                    .unzip();
                population_std(&xs).hypot(population_std(&ys))
            })
            .sum();
        total / stable.len() as f64
    });
    let curve = PRESENCE_GRID
        .iter()
        .map(|&p| {
            let pct = if uniques.is_empty() {
                0.0
            } else {
                let c = hits.iter().filter(|&&h| h * 100 >= p as usize * n_sets).count();
                100.0 * c as f64 / uniques.len() as f64
            };
            (p, pct)
        })
        .collect();
    Ok(StabilityReport {
        uniques,
        hits,
        n_sets,
        stable,
        precision,
        curve,
    })
}

/// Canonical-order comparison of two keypoint lists by node and coordinates.
pub fn same_keypoint_sets(a: &[Keypoint], b: &[Keypoint]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    sort_canonical(&mut a);
    sort_canonical(&mut b);
    a.len() == b.len()
        && a.iter()
            .zip(&b)
            .all(|(p, q)| p.canonical_cmp(q) == Ordering::Equal)
}
