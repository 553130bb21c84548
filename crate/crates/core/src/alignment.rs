//! Linear sum assignment and the known/novel split of clusters.
//!
//! [`hungarian`] solves the rectangular minimum-cost assignment problem with
//! the shortest-augmenting-path (potentials) form of the Hungarian algorithm.
//! Rectangular inputs are padded to square with a constant sentinel cost;
//! since every padded entry is the same constant, padding never changes which
//! real pairs are optimal.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::vector;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("cost matrix is empty")]
    Empty,
    #[error("cost matrix row {0} has inconsistent length")]
    Ragged(usize),
    #[error("non-finite cost at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("{known} known classes exceed K = {k}")]
    TooManyKnown { known: usize, k: usize },
    #[error("expected {expected} rank entries, got {found}")]
    BadRankOrder { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row; `min(m, n)` of them.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

impl Assignment {
    pub fn col_of_row(&self, rows: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; rows];
        for &(r, c) in &self.pairs {
            out[r] = Some(c);
        }
        out
    }

    pub fn row_of_col(&self, cols: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; cols];
        for &(r, c) in &self.pairs {
            out[c] = Some(r);
        }
        out
    }
}

const SENTINEL_SCALE: f64 = 1e6;

/// Minimum-cost assignment of `min(m, n)` rows to distinct columns.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment, AlignError> {
    let m = cost.len();
    if m == 0 || cost[0].is_empty() {
        return Err(AlignError::Empty);
    }
    let n = cost[0].len();
    let mut max_abs = 0.0f64;
    for (r, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(AlignError::Ragged(r));
        }
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(AlignError::NonFinite { row: r, col: c });
            }
            max_abs = max_abs.max(v.abs());
        }
    }
    let size = m.max(n);
    let sentinel = if max_abs > 0.0 {
        SENTINEL_SCALE * max_abs
    } else {
        1.0
    };
    let at = |r: usize, c: usize| -> f64 {
        if r < m && c < n {
            cost[r][c]
        } else {
            sentinel
        }
    };

    // 1-based potentials formulation; column 0 is a virtual root.
    let mut u = vec![0.0; size + 1];
    let mut v = vec![0.0; size + 1];
    let mut row_of = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=size {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=size)
        .filter(|&j| row_of[j] != 0)
        .map(|j| (row_of[j] - 1, j - 1))
        .filter(|&(r, c)| r < m && c < n)
        .collect();
    pairs.sort_unstable();
    let cost = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    Ok(Assignment { pairs, cost })
}

/// Result of matching unlabeled clusters to labeled (known) classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Class id given to each cluster: a known class for matched clusters, a
    /// fresh id from `[0, K) \ known` for novel ones.
    pub class_of_cluster: Vec<usize>,
    pub novel_clusters: BTreeSet<usize>,
    pub cost: f64,
}

impl Matching {
    pub fn is_novel(&self, cluster: usize) -> bool {
        self.novel_clusters.contains(&cluster)
    }

    pub fn cluster_of_class(&self, class: usize) -> Option<usize> {
        self.class_of_cluster.iter().position(|&c| c == class)
    }
}

/// Hungarian match of labeled class centroids (rows) to cluster centers
/// (columns) on Euclidean distance. Unmatched clusters become novel and take
/// the free class ids in ascending order, following `rank_order` (cluster ids
/// by descending rank score).
pub fn match_clusters(
    centers: &[Vec<f64>],
    labeled_centroids: &[(usize, Vec<f64>)],
    rank_order: &[usize],
) -> Result<Matching, AlignError> {
    let k = centers.len();
    if labeled_centroids.len() > k {
        return Err(AlignError::TooManyKnown {
            known: labeled_centroids.len(),
            k,
        });
    }
    if rank_order.len() != k {
        return Err(AlignError::BadRankOrder {
            expected: k,
            found: rank_order.len(),
        });
    }
    let mut class_of_cluster = vec![usize::MAX; k];
    let mut cost_total = 0.0;
    if !labeled_centroids.is_empty() {
        let cost: Vec<Vec<f64>> = labeled_centroids
            .iter()
            .map(|(_, c)| centers.iter().map(|m| vector::dist(c, m)).collect())
            .collect();
        let a = hungarian(&cost)?;
        for &(r, c) in &a.pairs {
            class_of_cluster[c] = labeled_centroids[r].0;
        }
        cost_total = a.cost;
    }
    let known: BTreeSet<usize> = labeled_centroids.iter().map(|(c, _)| *c).collect();
    let mut free = (0..k).filter(|c| !known.contains(c));
    let mut novel_clusters = BTreeSet::new();
    for &cluster in rank_order {
        if class_of_cluster[cluster] == usize::MAX {
            class_of_cluster[cluster] = free.next().expect("enough free class ids");
            novel_clusters.insert(cluster);
        }
    }
    Ok(Matching {
        class_of_cluster,
        novel_clusters,
        cost: cost_total,
    })
}

/// Re-maps the ids of novel clusters so they line up with the novel
/// prototypes carried over from an earlier round (nearest-cost Hungarian on
/// cosine distance). Novel ids without a previous prototype keep the
/// rank-order assignment among the leftover clusters.
pub fn carry_over_novel_ids(matching: &mut Matching, centers: &[Vec<f64>], previous: &BTreeMap<usize, Vec<f64>>) {
    let novel_ids: BTreeSet<usize> = matching
        .novel_clusters
        .iter()
        .map(|&c| matching.class_of_cluster[c])
        .collect();
    let anchored: Vec<(usize, &Vec<f64>)> = previous
        .iter()
        .filter(|(id, _)| novel_ids.contains(id))
        .map(|(id, p)| (*id, p))
        .collect();
    if anchored.is_empty() {
        return;
    }
    // Clusters in their current (rank-derived) id order.
    let mut clusters: Vec<usize> = matching.novel_clusters.iter().copied().collect();
    clusters.sort_by_key(|&c| matching.class_of_cluster[c]);
    let cost: Vec<Vec<f64>> = anchored
        .iter()
        .map(|(_, p)| {
            clusters
                .iter()
                .map(|&c| 1.0 - vector::cosine(p, &centers[c]).unwrap_or(0.0))
                .collect()
        })
        .collect();
    let Ok(a) = hungarian(&cost) else { return };
    let mut new_ids = BTreeMap::new();
    for &(r, col) in &a.pairs {
        new_ids.insert(clusters[col], anchored[r].0);
    }
    let taken: BTreeSet<usize> = new_ids.values().copied().collect();
    let mut rest = novel_ids.iter().copied().filter(|id| !taken.contains(id));
    for &c in &clusters {
        new_ids.entry(c).or_insert_with(|| rest.next().expect("ids and clusters have equal count"));
    }
    for (c, id) in new_ids {
        matching.class_of_cluster[c] = id;
    }
}
