//! Lloyd k-means over standardized features, silhouette scoring and the
//! smallest-k-above-threshold selection rule.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MopeError, Result};
use crate::features::{extract_features, Standardizer, StdFeatureVector, FEATURE_DIM};
use crate::parallel::Execution;

impl AsRef<[f64]> for StdFeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_K_STEP: usize = 5;
pub const DEFAULT_SILHOUETTE_CAP: usize = 2_000;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn nearest(row: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tolerance: f64,
    pub exec: Execution,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            tolerance: DEFAULT_TOLERANCE,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared distances to the assigned center after each assignment step.
    pub inertia_trace: Vec<f64>,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }
}

fn distinct_rows<P: AsRef<[f64]>>(rows: &[P]) -> Vec<usize> {
    let mut seen = HashSet::new();
    rows.iter()
        .enumerate()
        .filter(|(_, r)| seen.insert(r.as_ref().iter().map(|x| x.to_bits()).collect::<Vec<_>>()))
        .map(|(i, _)| i)
        .collect()
}

/// Lloyd iterations from `k` randomly chosen distinct rows.
///
/// Stops when no center moves more than `tolerance` or after `max_iter`
/// rounds. A cluster that loses all its rows is re-seeded at the row
/// farthest from its currently assigned center.
pub fn kmeans<P>(rows: &[P], cfg: &KMeansConfig) -> Result<KMeansFit>
where
    P: AsRef<[f64]> + Sync,
{
    let k = cfg.k;
    if k < 2 {
        return Err(MopeError::InvalidArgument(format!(
            "k must be at least 2, got {k}"
        )));
    }
    let mut distinct = distinct_rows(rows);
    if k > distinct.len() {
        return Err(MopeError::InsufficientData(format!(
            "k = {k} exceeds the {} distinct rows",
            distinct.len()
        )));
    }
    distinct.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut centers: Vec<Vec<f64>> = distinct[..k]
        .iter()
        .map(|&i| rows[i].as_ref().to_vec())
        .collect();
    let dim = centers[0].len();

    let mut trace = Vec::new();
    let mut labels = vec![0usize; rows.len()];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let assigned = cfg.exec.map(rows, |r| nearest(r.as_ref(), &centers));
        trace.push(assigned.iter().map(|a| a.1).sum());
        for (l, a) in labels.iter_mut().zip(&assigned) {
            *l = a.0;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            sizes[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(r.as_ref()) {
                *s += v;
            }
        }

        let mut next = centers.clone();
        let mut taken: HashSet<usize> = HashSet::new();
        for j in 0..k {
            if sizes[j] > 0 {
                next[j] = sums[j].iter().map(|s| s / sizes[j] as f64).collect();
            } else {
                let far = assigned
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .expect("rows exist");
                taken.insert(far);
                next[j] = rows[far].as_ref().to_vec();
            }
        }

        let shift = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| dist(a, b))
            .fold(0.0, f64::max);
        centers = next;
        if shift < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let assigned = cfg.exec.map(rows, |r| nearest(r.as_ref(), &centers));
    let mut sizes = vec![0usize; k];
    for (l, a) in labels.iter_mut().zip(&assigned) {
        *l = a.0;
        sizes[a.0] += 1;
    }
    Ok(KMeansFit {
        centers,
        labels,
        sizes,
        iterations,
        converged,
        inertia_trace: trace,
    })
}

fn cluster_count(labels: &[usize]) -> Result<(usize, Vec<usize>)> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(MopeError::InvalidArgument(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if let Some(j) = sizes.iter().position(|&s| s == 0) {
        return Err(MopeError::InvalidArgument(format!("cluster {j} is empty")));
    }
    Ok((k, sizes))
}

/// Mean silhouette coefficient with Euclidean distance.
///
/// Points in singleton clusters score 0, as do points with `a = b = 0`.
/// With `sample_cap = Some(c)` and more than `c` rows, the mean is taken over
/// a seeded uniform sample of `c` rows; distances still run against every row.
pub fn silhouette<P>(
    rows: &[P],
    labels: &[usize],
    sample_cap: Option<usize>,
    seed: u64,
    exec: Execution,
) -> Result<f64>
where
    P: AsRef<[f64]> + Sync,
{
    if rows.len() != labels.len() {
        return Err(MopeError::InvalidArgument(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let (k, sizes) = cluster_count(labels)?;
    let probe: Vec<usize> = match sample_cap {
        Some(cap) if rows.len() > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, rows.len(), cap).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..rows.len()).collect(),
    };

    let scores = exec.map(&probe, |&i| {
        let own = labels[i];
        if sizes[own] == 1 {
            return 0.0;
        }
        let mut sums = vec![0.0; k];
        let xi = rows[i].as_ref();
        for (r, &l) in rows.iter().zip(labels) {
            sums[l] += dist(xi, r.as_ref());
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&j| j != own)
            .map(|j| sums[j] / sizes[j] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            (b - a) / m
        } else {
            0.0
        }
    });
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionReport {
    /// `(k, S(k))` in the order evaluated.
    pub scores: Vec<(usize, f64)>,
    pub k_star: usize,
    pub tau: f64,
    /// False when no evaluated k exceeded `tau` and `k_star` is the argmax fallback.
    pub threshold_met: bool,
}

/// Applies `k* = min{k | S(k) > tau}` to precomputed scores, falling back
/// to the best-scoring k (smallest on ties) when the threshold is never met.
pub fn select_k_from_scores(scores: &[(usize, f64)], tau: f64) -> Result<KSelectionReport> {
    if scores.is_empty() {
        return Err(MopeError::InvalidArgument(
            "no k values to select from".into(),
        ));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by_key(|s| s.0);
    let (k_star, threshold_met) = match sorted.iter().find(|s| s.1 > tau) {
        Some(&(k, _)) => (k, true),
        None => {
            let best = sorted
                .iter()
                .fold(sorted[0], |best, &s| if s.1 > best.1 { s } else { best });
            (best.0, false)
        }
    };
    Ok(KSelectionReport {
        scores: sorted,
        k_star,
        tau,
        threshold_met,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SelectConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub step: usize,
    pub tau: f64,
    pub seed: u64,
    pub max_iter: usize,
    pub silhouette_cap: Option<usize>,
    pub exec: Execution,
}

impl SelectConfig {
    pub fn new(k_min: usize, k_max: usize, tau: f64, seed: u64) -> Self {
        SelectConfig {
            k_min,
            k_max,
            step: DEFAULT_K_STEP,
            tau,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            silhouette_cap: Some(DEFAULT_SILHOUETTE_CAP),
            exec: Execution::default(),
        }
    }
}

/// Scans k ascending over `[k_min, k_max]` in `step`s and stops at the first
/// k whose silhouette exceeds `tau`. Returns the report and the chosen fit.
pub fn select_k<P>(rows: &[P], cfg: &SelectConfig) -> Result<(KSelectionReport, KMeansFit)>
where
    P: AsRef<[f64]> + Sync,
{
    let distinct = distinct_rows(rows).len();
    if cfg.k_min < 2 || cfg.k_min > cfg.k_max || cfg.k_max > distinct || cfg.step == 0 {
        return Err(MopeError::InvalidArgument(format!(
            "k range {}..={} step {} is invalid for {distinct} distinct rows",
            cfg.k_min, cfg.k_max, cfg.step
        )));
    }
    let mut scores = Vec::new();
    let mut best: Option<(f64, KMeansFit)> = None;
    for k in (cfg.k_min..=cfg.k_max).step_by(cfg.step) {
        let fit = kmeans(
            rows,
            &KMeansConfig {
                k,
                seed: cfg.seed,
                max_iter: cfg.max_iter,
                tolerance: DEFAULT_TOLERANCE,
                exec: cfg.exec,
            },
        )?;
        let s = silhouette(rows, &fit.labels, cfg.silhouette_cap, cfg.seed, cfg.exec)?;
        scores.push((k, s));
        let above = s > cfg.tau;
        if best.as_ref().is_none_or(|b| s > b.0) || above {
            best = Some((s, fit));
        }
        if above {
            break;
        }
    }
    let report = select_k_from_scores(&scores, cfg.tau)?;
    Ok((report, best.expect("at least one k evaluated").1))
}

/// Cluster centers in standardized feature space together with the
/// standardizer that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centers: Vec<StdFeatureVector>,
    pub standardizer: Standardizer,
    /// Training rows per cluster; gives the prior used for empty prefixes.
    pub sizes: Vec<usize>,
    #[serde(skip)]
    pub labels: Option<Vec<usize>>,
}

impl ClusterModel {
    pub fn new(
        standardizer: Standardizer,
        centers: Vec<StdFeatureVector>,
        sizes: Vec<usize>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let k = centers.len();
        if k < 2 {
            return Err(MopeError::InvalidArgument(
                "a cluster model needs k >= 2".into(),
            ));
        }
        if sizes.len() != k {
            return Err(MopeError::InvalidArgument(
                "one size per center required".into(),
            ));
        }
        for i in 0..k {
            for j in i + 1..k {
                if centers[i] == centers[j] {
                    return Err(MopeError::InvalidArgument(format!(
                        "centers {i} and {j} coincide"
                    )));
                }
            }
        }
        if let Some(l) = &labels {
            if l.iter().any(|&x| x >= k) {
                return Err(MopeError::InvalidArgument("label out of range".into()));
            }
        }
        Ok(ClusterModel {
            k,
            centers,
            standardizer,
            sizes,
            labels,
        })
    }

    pub fn from_fit(standardizer: Standardizer, fit: &KMeansFit) -> Result<Self> {
        let centers = fit
            .centers
            .iter()
            .map(|c| {
                let arr: [f64; FEATURE_DIM] = c.as_slice().try_into().map_err(|_| {
                    MopeError::InvalidArgument(format!("center has {} dims", c.len()))
                })?;
                Ok(StdFeatureVector(arr))
            })
            .collect::<Result<Vec<_>>>()?;
        ClusterModel::new(
            standardizer,
            centers,
            fit.sizes.clone(),
            Some(fit.labels.clone()),
        )
    }

    /// Nearest center for a password (used to route training data).
    pub fn assign(&self, password: &str) -> Result<usize> {
        let f = self.standardizer.standardize(&extract_features(password)?);
        let centers: Vec<Vec<f64>> = self.centers.iter().map(|c| c.0.to_vec()).collect();
        Ok(nearest(&f.0, &centers).0)
    }
}

/// Features, standardizer and k selection for a list of passwords.
pub fn cluster_passwords(
    passwords: &[&str],
    cfg: &SelectConfig,
) -> Result<(ClusterModel, KSelectionReport)> {
    let raw = passwords
        .iter()
        .map(|p| extract_features(p))
        .collect::<Result<Vec<_>>>()?;
    let standardizer = Standardizer::fit(&raw)?;
    let rows = standardizer.standardize_all(&raw);
    let (report, fit) = select_k(&rows, cfg)?;
    Ok((ClusterModel::from_fit(standardizer, &fit)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn pts(v: &[(f64, f64)]) -> Vec<Vec<f64>> {
        v.iter().map(|&(a, b)| vec![a, b]).collect()
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let rows = pts(&[(0.0, 0.0), (1.0, 5.0), (3.0, 2.0), (9.0, 9.0)]);
        let fit = kmeans(&rows, &KMeansConfig::new(4, 1)).unwrap();
        assert_eq!(fit.inertia(), 0.0);
        let mut labels = fit.labels.clone();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 4);
    }

    #[test]
    fn kmeans_argument_errors() {
        let rows = pts(&[(0.0, 0.0), (0.0, 0.0), (1.0, 1.0)]);
        assert!(kmeans(&rows, &KMeansConfig::new(1, 0)).is_err());
        assert!(matches!(
            kmeans(&rows, &KMeansConfig::new(3, 0)),
            Err(MopeError::InsufficientData(_))
        ));
    }

    #[test]
    fn two_blobs_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rows = Vec::new();
        for i in 0..200 {
            let base = if i % 2 == 0 { 0.0 } else { 100.0 };
            rows.push(
                (0..8)
                    .map(|_| base + rng.gen_range(-0.1..0.1))
                    .collect::<Vec<f64>>(),
            );
        }
        for seed in 0..5 {
            let fit = kmeans(&rows, &KMeansConfig::new(2, seed)).unwrap();
            for (i, r) in rows.iter().enumerate() {
                // brute-force nearest center
                let (j, _) = nearest(r, &fit.centers);
                assert_eq!(fit.labels[i], j);
                assert_eq!(fit.labels[i], fit.labels[i % 2]);
            }
            assert_ne!(fit.labels[0], fit.labels[1]);
        }
    }

    #[test]
    fn empty_cluster_reseeded_from_farthest_point() {
        // Start with k=3 where the third center is a duplicate-adjacent point that
        // loses every row in the first assignment; the fit must still return three
        // non-empty clusters.
        let rows = pts(&[
            (0.0, 0.0),
            (0.0, 0.1),
            (0.1, 0.0),
            (50.0, 50.0),
            (50.0, 50.1),
            (200.0, 0.0),
        ]);
        for seed in 0..30 {
            let fit = kmeans(&rows, &KMeansConfig::new(3, seed)).unwrap();
            assert!(
                fit.sizes.iter().all(|&s| s > 0),
                "seed {seed}: {:?}",
                fit.sizes
            );
            for w in fit.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
        }
    }

    #[test]
    fn silhouette_four_points() {
        let rows = pts(&[(0.0, 0.0), (0.0, 1.0), (10.0, 10.0), (10.0, 11.0)]);
        let s = silhouette(&rows, &[0, 0, 1, 1], None, 0, Execution::Sequential).unwrap();
        // hand evaluation: per-point scores 1 - 1/14.504... and 1 - 1/13.798...
        let a = 1.0 - 1.0 / ((200f64.sqrt() + 221f64.sqrt()) / 2.0);
        let b = 1.0 - 1.0 / ((181f64.sqrt() + 200f64.sqrt()) / 2.0);
        assert_abs_diff_eq!(s, (a + b) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 0.929_289_542_7, epsilon = 1e-9);
    }

    #[test]
    fn silhouette_degenerate_conventions() {
        let rows = pts(&[(0.0, 0.0), (5.0, 5.0)]);
        assert_eq!(
            silhouette(&rows, &[0, 1], None, 0, Execution::Sequential).unwrap(),
            0.0
        );
        let same = pts(&[(1.0, 1.0); 4]);
        assert_eq!(
            silhouette(&same, &[0, 0, 1, 1], None, 0, Execution::Sequential).unwrap(),
            0.0
        );
        assert!(silhouette(&same, &[0, 0, 0, 0], None, 0, Execution::Sequential).is_err());
        assert!(silhouette(&same, &[0, 0, 2, 2], None, 0, Execution::Sequential).is_err());
    }

    #[test]
    fn silhouette_sampling_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let labels: Vec<usize> = rows.iter().map(|r| usize::from(r[0] > 0.5)).collect();
        let a = silhouette(&rows, &labels, Some(50), 7, Execution::Parallel).unwrap();
        let b = silhouette(&rows, &labels, Some(50), 7, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        let full = silhouette(&rows, &labels, None, 7, Execution::Parallel).unwrap();
        assert!((a - full).abs() < 0.1);
    }

    #[test]
    fn selection_rule() {
        let csdn = [
            0.6046, 0.6672, 0.6777, 0.6837, 0.7072, 0.7083, 0.7168, 0.7362, 0.7783,
        ];
        let scores: Vec<(usize, f64)> = (30..=70).step_by(5).zip(csdn).collect();
        let r = select_k_from_scores(&scores, 0.7).unwrap();
        assert_eq!(r.k_star, 50);
        assert!(r.threshold_met);

        let r = select_k_from_scores(&[(2, 0.3), (3, 0.45), (4, 0.41)], 0.5).unwrap();
        assert_eq!(r.k_star, 3);
        assert!(!r.threshold_met);
        assert!(select_k_from_scores(&[], 0.5).is_err());
    }

    #[test]
    fn select_k_rejects_bad_ranges() {
        let rows = pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        assert!(select_k(&rows, &SelectConfig::new(1, 2, 0.5, 0)).is_err());
        assert!(select_k(&rows, &SelectConfig::new(3, 2, 0.5, 0)).is_err());
        assert!(select_k(&rows, &SelectConfig::new(2, 4, 0.5, 0)).is_err());
    }
}
