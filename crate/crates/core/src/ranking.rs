//! Cluster ranking, Student-t assignment distributions, and the high- and
//! low-confidence sample selections built on them.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterStats;
use crate::vector;

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("sigma must lie in [0, 1], got {0}")]
    SigmaOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub sigma: f64,
    pub alpha: f64,
    /// High-confidence samples taken per cluster.
    pub k_high: usize,
    /// Highest-entropy samples considered globally for reassignment.
    pub k_low: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            alpha: 1.0,
            k_high: 50,
            k_low: 500,
        }
    }
}

/// Fills `rank_score = sigma * compactness + (1 - sigma) * size_score` and
/// sorts descending; ties go to the larger cluster, then the lower id.
pub fn rank_clusters(stats: &mut [ClusterStats], sigma: f64) -> Result<(), RankError> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(RankError::SigmaOutOfRange(sigma));
    }
    for s in stats.iter_mut() {
        s.rank_score = Some(sigma * s.compactness + (1.0 - sigma) * s.size_score);
    }
    stats.sort_by(|a, b| {
        b.rank_score
            .unwrap_or(0.0)
            .total_cmp(&a.rank_score.unwrap_or(0.0))
            .then(b.size.cmp(&a.size))
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDistribution {
    pub q: Vec<f64>,
    /// Shannon entropy of `q` in nats.
    pub entropy: f64,
    pub nearest: usize,
    pub nearest_distance: f64,
}

/// Student-t soft assignment of `point` to every center with `alpha` degrees
/// of freedom, plus its entropy.
pub fn assignment_distribution(point: &[f64], centers: &[Vec<f64>], alpha: f64) -> AssignmentDistribution {
    debug_assert!(alpha > 0.0 && !centers.is_empty());
    let exponent = -(alpha + 1.0) / 2.0;
    let sq: Vec<f64> = centers.iter().map(|c| vector::sq_dist(point, c)).collect();
    // Work in log space so distant centers underflow gracefully.
    let logk: Vec<f64> = sq.iter().map(|d| exponent * (1.0 + d / alpha).ln()).collect();
    let lse = vector::log_sum_exp(&logk);
    let q: Vec<f64> = logk.iter().map(|l| (l - lse).exp()).collect();
    let entropy = -logk
        .iter()
        .zip(&q)
        .map(|(l, p)| if *p > 0.0 { p * (l - lse) } else { 0.0 })
        .sum::<f64>();
    let (nearest, nearest_sq) = sq
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (j, &d)| if d < best.1 { (j, d) } else { best });
    AssignmentDistribution {
        q,
        entropy: entropy.max(0.0),
        nearest,
        nearest_distance: nearest_sq.sqrt(),
    }
}

/// One selection candidate: `index` is the caller's handle, `id` breaks ties.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<'a> {
    pub index: usize,
    pub id: &'a str,
    pub distance: f64,
    pub entropy: f64,
}

fn by_distance(a: &Candidate, b: &Candidate) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.id.cmp(b.id))
}

fn by_entropy_asc(a: &Candidate, b: &Candidate) -> Ordering {
    a.entropy.total_cmp(&b.entropy).then(a.id.cmp(b.id))
}

/// High-confidence members of one cluster: the intersection of the `k_high`
/// most central and `k_high` most certain members, topped up from the
/// centrality ranking and then the certainty ranking. Output order is the
/// order in which members were taken.
pub fn select_high_confidence(members: &[Candidate], k_high: usize) -> Vec<usize> {
    let target = k_high.min(members.len());
    let mut by_dist: Vec<&Candidate> = members.iter().collect();
    by_dist.sort_by(|a, b| by_distance(a, b));
    by_dist.truncate(k_high);
    let mut by_ent: Vec<&Candidate> = members.iter().collect();
    by_ent.sort_by(|a, b| by_entropy_asc(a, b));
    by_ent.truncate(k_high);

    let certain: HashSet<usize> = by_ent.iter().map(|c| c.index).collect();
    let mut taken = HashSet::new();
    let mut out = Vec::with_capacity(target);
    let intersection = by_dist.iter().filter(|c| certain.contains(&c.index));
    for c in intersection.chain(by_dist.iter()).chain(by_ent.iter()) {
        if out.len() == target {
            break;
        }
        if taken.insert(c.index) {
            out.push(c.index);
        }
    }
    out
}

/// Unstable samples among the global top-`k_low` by entropy (descending).
/// `unstable[i]` refers to `candidates[i]`.
pub fn select_low_confidence(candidates: &[Candidate], unstable: &[bool], k_low: usize) -> Vec<usize> {
    debug_assert_eq!(candidates.len(), unstable.len());
    let mut order: Vec<(usize, &Candidate)> = candidates.iter().enumerate().collect();
    order.sort_by(|a, b| b.1.entropy.total_cmp(&a.1.entropy).then(a.1.id.cmp(b.1.id)));
    order
        .into_iter()
        .take(k_low)
        .filter(|(pos, _)| unstable[*pos])
        .map(|(_, c)| c.index)
        .collect()
}
