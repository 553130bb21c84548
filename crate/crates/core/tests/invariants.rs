//! Property tests against brute-force references.

use std::collections::BTreeSet;

use proptest::prelude::*;

use gcd_core::alignment::hungarian;
use gcd_core::clustering::{compactness_scores, instability, kmeans, multi_run, size_scores};
use gcd_core::evaluation::{aligned_accuracy, gcd_metrics, h_score};
use gcd_core::ranking::assignment_distribution;
use gcd_core::vector;

/// Every injective map from the smaller side into the larger, by recursion.
fn best_assignment(cost: &[Vec<f64>]) -> f64 {
    let (m, n) = (cost.len(), cost[0].len());
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, transpose: bool) -> f64 {
        let rows = if transpose { cost[0].len() } else { cost.len() };
        if row == rows {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..used.len() {
            if used[c] {
                continue;
            }
            used[c] = true;
            let v = if transpose { cost[c][row] } else { cost[row][c] };
            best = best.min(v + go(cost, row + 1, used, transpose));
            used[c] = false;
        }
        best
    }
    if m <= n {
        go(cost, 0, &mut vec![false; n], false)
    } else {
        go(cost, 0, &mut vec![false; m], true)
    }
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 1usize..6).prop_flat_map(|(m, n)| prop::collection::vec(prop::collection::vec(-50.0f64..50.0, n), m))
}

fn points(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), 6..40)
}

fn labelings() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..5).prop_flat_map(|k| {
        prop::collection::vec((0..k, 0..k), 1..60).prop_map(|pairs| pairs.into_iter().unzip())
    })
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, k - 1);
            out.push(q);
        }
    }
    out
}

proptest! {
    #[test]
    fn hungarian_matches_exhaustive(cost in matrix()) {
        let a = hungarian(&cost).unwrap();
        let (m, n) = (cost.len(), cost[0].len());
        prop_assert_eq!(a.pairs.len(), m.min(n));
        let rows: BTreeSet<_> = a.pairs.iter().map(|p| p.0).collect();
        let cols: BTreeSet<_> = a.pairs.iter().map(|p| p.1).collect();
        prop_assert_eq!(rows.len(), a.pairs.len());
        prop_assert_eq!(cols.len(), a.pairs.len());
        let total: f64 = a.pairs.iter().map(|&(r, c)| cost[r][c]).sum();
        prop_assert!((total - a.cost).abs() < 1e-9);
        prop_assert!((total - best_assignment(&cost)).abs() < 1e-9);
    }

    #[test]
    fn aligned_accuracy_matches_exhaustive((pred, truth) in labelings()) {
        let k = pred.iter().chain(&truth).max().unwrap() + 1;
        let a = aligned_accuracy(&pred, &truth, k).unwrap();
        let best = permutations(k)
            .iter()
            .map(|perm| pred.iter().zip(&truth).filter(|(p, t)| perm[**p] == **t).count())
            .max()
            .unwrap();
        prop_assert!((a.accuracy - best as f64 / pred.len() as f64).abs() < 1e-12);
        let mut seen = a.permutation.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn relabeling_predictions_keeps_metrics((pred, truth) in labelings(), shift in 1usize..4) {
        let k = pred.iter().chain(&truth).max().unwrap() + 1;
        let known: BTreeSet<usize> = [0].into();
        let relabeled: Vec<usize> = pred.iter().map(|p| (p + shift) % k).collect();
        let a = gcd_metrics(&pred, &truth, &known, k).unwrap();
        let b = gcd_metrics(&relabeled, &truth, &known, k).unwrap();
        prop_assert!((a.acc_all - b.acc_all).abs() < 1e-12);
    }

    #[test]
    fn h_score_lies_between_min_and_mean(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let h = h_score(a, b);
        prop_assert!(h <= (a + b) / 2.0 + 1e-12);
        prop_assert!(h + 1e-12 >= a.min(b) || a.min(b) == 0.0);
        prop_assert!((h - h_score(b, a)).abs() < 1e-15);
    }

    #[test]
    fn kmeans_ends_at_a_lloyd_fixpoint(pts in points(3), k in 2usize..5, seed in 0u64..1000) {
        let r = kmeans(&pts, k, seed, 200).unwrap();
        prop_assert_eq!(r.assignments.len(), pts.len());
        prop_assert_eq!(r.k(), k);
        for j in 0..k {
            prop_assert!(!r.members(j).is_empty(), "cluster {} empty", j);
        }
        for w in r.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0));
        }
        let inertia: f64 = pts.iter().zip(&r.assignments).map(|(p, &a)| vector::sq_dist(p, &r.centers[a])).sum();
        prop_assert!((inertia - r.inertia).abs() < 1e-9 * inertia.max(1.0));
        let again = kmeans(&pts, k, seed, 200).unwrap();
        prop_assert_eq!(&again.assignments, &r.assignments);
    }

    #[test]
    fn identical_runs_are_stable(pts in points(2), k in 2usize..4, seed in 0u64..100) {
        let mr = multi_run(&pts, k, seed, 3, 200).unwrap();
        prop_assert_eq!(mr.runs.len(), 3);
        let same = vec![mr.runs[0].clone(); 3];
        prop_assert!(instability(&same).iter().all(|u| !u));
    }

    #[test]
    fn minmax_scores_span_unit_interval(d in prop::collection::vec(0.0f64..10.0, 2..10)) {
        let c = compactness_scores(&d);
        prop_assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            let i_lo = d.iter().position(|&v| v == lo).unwrap();
            let i_hi = d.iter().position(|&v| v == hi).unwrap();
            prop_assert_eq!(c[i_lo], 1.0);
            prop_assert_eq!(c[i_hi], 0.0);
        }
        let sizes: Vec<usize> = d.iter().map(|v| (*v * 10.0) as usize).collect();
        prop_assert!(size_scores(&sizes).iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn assignment_distribution_is_a_distribution(p in prop::collection::vec(-3.0f64..3.0, 2), centers in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 2..6)) {
        let d = assignment_distribution(&p, &centers, 1.0);
        let total: f64 = d.q.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(d.q.iter().all(|&q| q > 0.0));
        prop_assert!(d.entropy >= -1e-12 && d.entropy <= (centers.len() as f64).ln() + 1e-12);
        let closest = (0..centers.len())
            .min_by(|&a, &b| vector::sq_dist(&p, &centers[a]).total_cmp(&vector::sq_dist(&p, &centers[b])))
            .unwrap();
        let top = d.q.iter().copied().fold(0.0, f64::max);
        prop_assert!((d.q[closest] - top).abs() < 1e-12);
    }
}
