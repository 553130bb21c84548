//! K-means over projected unlabeled embeddings, multi-run alignment, and the
//! per-cluster statistics used for ranking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{self, AlignError};
use crate::vector;

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least K = {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("K must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("runs must be at least 1")]
    NoRuns,
    #[error(transparent)]
    Align(#[from] AlignError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    /// Cluster id per input point, in input order.
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
    pub run_seed: u64,
    /// Inertia after each Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

impl ClusteringResult {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    /// Renames cluster `j` to `mapping[j]`.
    fn relabel(&mut self, mapping: &[usize]) {
        let mut centers = vec![Vec::new(); self.centers.len()];
        for (old, c) in self.centers.drain(..).enumerate() {
            centers[mapping[old]] = c;
        }
        self.centers = centers;
        for a in &mut self.assignments {
            *a = mapping[*a];
        }
    }
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = vector::sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| vector::sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        let c = centers.last().expect("just pushed");
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(vector::sq_dist(p, c));
        }
    }
    centers
}

fn update_centers(points: &[Vec<f64>], assign: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assign) {
        vector::axpy(&mut sums[a], 1.0, p);
        counts[a] += 1;
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    (sums, counts)
}

/// Moves each empty cluster onto the point farthest from its current center,
/// taken from a cluster that can spare it. Returns recomputed centers.
fn repair_empty(points: &[Vec<f64>], assign: &mut [usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    loop {
        let (centers, counts) = update_centers(points, assign, k, dim);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return centers;
        };
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if counts[assign[i]] < 2 {
                continue;
            }
            let d = vector::sq_dist(p, &centers[assign[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("n >= k guarantees a donor cluster");
        assign[i] = empty;
    }
}

fn inertia_of(points: &[Vec<f64>], assign: &[usize], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assign)
        .map(|(p, &a)| vector::sq_dist(p, &centers[a]))
        .sum()
}

/// Lloyd's algorithm from a k-means++ start. Stops when the assignment is a
/// fixpoint or after `max_iter` iterations. Ties go to the lowest cluster id.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<ClusteringResult, ClusterError> {
    if k < 2 {
        return Err(ClusterError::KTooSmall(k));
    }
    if points.len() < k {
        return Err(ClusterError::TooFewPoints { n: points.len(), k });
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..max_iter.max(1) {
        centers = repair_empty(points, &mut assign, k, dim);
        let inertia = inertia_of(points, &assign, &centers);
        if let Some(&last) = trace.last() {
            debug_assert!(inertia <= last + 1e-9 * last.max(1.0), "inertia rose: {last} -> {inertia}");
        }
        trace.push(inertia);
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        // Keep repaired assignments stable so a converged repair is a fixpoint.
        repair_empty(points, &mut next, k, dim);
        if next == assign {
            break;
        }
        assign = next;
    }
    let centers = repair_empty(points, &mut assign, k, dim);
    let inertia = inertia_of(points, &assign, &centers);
    Ok(ClusteringResult {
        assignments: assign,
        centers,
        inertia,
        run_seed: seed,
        inertia_trace: trace,
    })
}

#[derive(Debug, Clone)]
pub struct MultiRun {
    /// Every run, relabeled onto the reference run's cluster ids, in seed order.
    pub runs: Vec<ClusteringResult>,
    pub reference: usize,
}

impl MultiRun {
    pub fn reference(&self) -> &ClusteringResult {
        &self.runs[self.reference]
    }
}

/// Aligns `run` to `reference` by Hungarian matching on center distance.
pub fn align_to(reference: &ClusteringResult, run: &mut ClusteringResult) -> Result<(), ClusterError> {
    let cost: Vec<Vec<f64>> = reference
        .centers
        .iter()
        .map(|r| run.centers.iter().map(|c| vector::dist(r, c)).collect())
        .collect();
    let a = alignment::hungarian(&cost)?;
    let mut mapping = vec![0; run.k()];
    for (r, c) in a.pairs {
        mapping[c] = r;
    }
    run.relabel(&mapping);
    Ok(())
}

/// `runs` independent K-means runs with seeds `base_seed..base_seed + runs`.
/// The minimal-inertia run is the reference; the others are aligned onto it.
pub fn multi_run(points: &[Vec<f64>], k: usize, base_seed: u64, runs: usize, max_iter: usize) -> Result<MultiRun, ClusterError> {
    if runs == 0 {
        return Err(ClusterError::NoRuns);
    }
    let mut results = (0..runs as u64)
        .into_par_iter()
        .map(|r| kmeans(points, k, base_seed.wrapping_add(r), max_iter))
        .collect::<Result<Vec<_>, _>>()?;
    let reference = results
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.inertia.total_cmp(&b.1.inertia).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("runs >= 1");
    let ref_result = results[reference].clone();
    for (i, r) in results.iter_mut().enumerate() {
        if i != reference {
            align_to(&ref_result, r)?;
        }
    }
    Ok(MultiRun {
        runs: results,
        reference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub cluster_id: usize,
    pub size: usize,
    pub mean_intra_distance: f64,
    pub compactness: f64,
    pub size_score: f64,
    pub rank_score: Option<f64>,
}

/// Min-max compactness: 1 for the tightest cluster, 0 for the loosest, and 1
/// everywhere when all mean distances coincide.
pub fn compactness_scores(mean_distances: &[f64]) -> Vec<f64> {
    let max = mean_distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = mean_distances.iter().copied().fold(f64::INFINITY, f64::min);
    mean_distances
        .iter()
        .map(|&d| if max != min { (max - d) / (max - min) } else { 1.0 })
        .collect()
}

/// Min-max size score: 1 for the largest cluster, 0 for the smallest, and 1
/// everywhere when all sizes coincide.
pub fn size_scores(sizes: &[usize]) -> Vec<f64> {
    let max = sizes.iter().copied().max().unwrap_or(0);
    let min = sizes.iter().copied().min().unwrap_or(0);
    sizes
        .iter()
        .map(|&s| {
            if max != min {
                (s - min) as f64 / (max - min) as f64
            } else {
                1.0
            }
        })
        .collect()
}

pub fn cluster_stats(result: &ClusteringResult, points: &[Vec<f64>]) -> Vec<ClusterStats> {
    let k = result.k();
    let mut sizes = vec![0usize; k];
    let mut dist_sum = vec![0.0; k];
    for (p, &a) in points.iter().zip(&result.assignments) {
        sizes[a] += 1;
        dist_sum[a] += vector::dist(p, &result.centers[a]);
    }
    let d: Vec<f64> = dist_sum
        .iter()
        .zip(&sizes)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect();
    let comp = compactness_scores(&d);
    let size = size_scores(&sizes);
    (0..k)
        .map(|j| ClusterStats {
            cluster_id: j,
            size: sizes[j],
            mean_intra_distance: d[j],
            compactness: comp[j],
            size_score: size[j],
            rank_score: None,
        })
        .collect()
}

/// A point is unstable when its aligned cluster id differs between any two runs.
pub fn instability(runs: &[ClusteringResult]) -> Vec<bool> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    (0..first.assignments.len())
        .map(|i| runs.iter().any(|r| r.assignments[i] != first.assignments[i]))
        .collect()
}
