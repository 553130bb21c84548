//! Independent reference implementations and the acceptance checks built on
//! them. Shared by the acceptance harness and the focused test files.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use gcd_core::alignment::hungarian;
use gcd_core::clustering::{compactness_scores, size_scores, ClusterStats};
use gcd_core::data::{synth_gcd, DatasetBundle, SynthSpec, DEFAULT_SYNTH_NOISE};
use gcd_core::evaluation::{gcd_metrics, GcdMetrics};
use gcd_core::oracle::mock::KeywordMock;
use gcd_core::oracle::parse::{parse_extraction_reply, parse_match_reply, CategoryRef};
use gcd_core::oracle::prompt::{build_extraction_prompt, build_match_prompt, build_refine_prompt, PromptDomain};
use gcd_core::oracle::PatternOracle;
use gcd_core::pipeline::checkpoint::Checkpoint;
use gcd_core::pipeline::{run_baseline, run_training, Config, Session};
use gcd_core::ranking::{assignment_distribution, rank_clusters};
use gcd_core::trainer::loss::{ce_loss, info_nce, pl_objectives, prototype_loss, PlSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn line(&self, number: usize) -> String {
        format!(
            "criterion {number} [{}] {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

pub fn fixture(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------- metrics

/// Printed (ACC_K, ACC_N, H) triples of the published comparison table, in
/// percent: (dataset, method, acc_k, acc_n, h).
pub const TABLE_ROWS: &[(&str, &str, f64, f64, f64)] = &[
    ("Scam", "MTP", 28.28, 36.18, 31.70),
    ("Scam", "DPN", 30.56, 17.59, 22.32),
    ("Scam", "TAN", 46.52, 32.16, 38.03),
    ("Scam", "ALUP", 40.48, 32.16, 35.84),
    ("Scam", "LOOP", 40.02, 22.61, 28.89),
    ("Scam", "GLEAN", 37.17, 32.66, 34.77),
    ("Scam", "Ours", 60.04, 44.10, 50.88),
    ("Telecom", "MTP", 55.43, 43.40, 48.68),
    ("Telecom", "DPN", 79.59, 45.28, 57.72),
    ("Telecom", "TAN", 71.19, 57.55, 63.65),
    ("Telecom", "ALUP", 74.29, 42.45, 54.02),
    ("Telecom", "LOOP", 57.62, 28.30, 37.96),
    ("Telecom", "GLEAN", 52.71, 65.57, 58.44),
    ("Telecom", "Ours", 83.18, 66.67, 74.05),
    ("BANKING", "MTP", 80.08, 50.04, 61.59),
    ("BANKING", "DPN", 80.93, 48.60, 60.73),
    ("BANKING", "TAN", 81.97, 56.23, 66.70),
    ("BANKING", "ALUP", 74.09, 46.05, 56.80),
    ("BANKING", "LOOP", 84.78, 60.13, 70.35),
    ("BANKING", "GLEAN", 75.15, 73.06, 74.09),
    ("BANKING", "Ours", 72.80, 78.16, 75.38),
    ("StackOverflow", "MTP", 84.75, 70.93, 77.23),
    ("StackOverflow", "DPN", 85.29, 81.07, 83.13),
    ("StackOverflow", "TAN", 86.36, 86.93, 86.64),
    // Printed H is 40.27; the harmonic mean of the printed accuracies is
    // 48.46. Kept out of the comparison.
    ("StackOverflow", "ALUP", 52.00, 45.38, 40.27),
    ("StackOverflow", "LOOP", 84.13, 86.40, 85.25),
    ("StackOverflow", "GLEAN", 84.93, 91.20, 87.96),
    ("StackOverflow", "Ours", 78.00, 86.00, 81.80),
    ("CLINC", "MTP", 91.69, 71.46, 80.32),
    ("CLINC", "DPN", 92.97, 77.54, 84.56),
    ("CLINC", "TAN", 93.39, 81.46, 87.02),
    ("CLINC", "ALUP", 90.12, 84.91, 87.43),
    ("CLINC", "LOOP", 92.08, 75.61, 83.04),
    ("CLINC", "GLEAN", 83.95, 74.23, 78.79),
    ("CLINC", "Ours", 89.70, 84.91, 87.24),
];

pub const INCONSISTENT_ROW: (&str, &str) = ("StackOverflow", "ALUP");

/// Predictions over 10000 known and 10000 novel test samples whose aligned
/// accuracies equal the given percentages exactly, so the H-score comes out
/// of the full metric path rather than a direct formula call.
/// Predictions and truth whose known and novel accuracies are exactly the
/// given percentages. Returns `(pred, truth, known, k)`.
fn labeling_for(acc_k: f64, acc_n: f64) -> (Vec<usize>, Vec<usize>, BTreeSet<usize>, usize) {
    // Two decimals in percent: denominators of 10000 are exact.
    let hits_k = (acc_k * 100.0).round() as usize;
    let hits_n = (acc_n * 100.0).round() as usize;
    let n = 10_000;
    // Class 0 is known and class 1 novel. Misses go to sink ids with no true
    // samples, at most SINK each; every group has more hits than that, so the
    // identity stays the optimal alignment.
    const SINK: usize = 100;
    let mut next_sink = 2;
    let mut truth = Vec::with_capacity(2 * n);
    let mut pred = Vec::with_capacity(2 * n);
    for (class, hits) in [(0, hits_k), (1, hits_n)] {
        assert!(hits > SINK, "too few hits for the sink layout");
        for i in 0..n {
            truth.push(class);
            if i < hits {
                pred.push(class);
            } else {
                pred.push(next_sink + (i - hits) / SINK);
            }
        }
        next_sink += (n - hits).div_ceil(SINK);
    }
    (pred, truth, [0].into(), next_sink)
}

pub struct MetricRow {
    pub dataset: &'static str,
    pub method: &'static str,
    pub printed: f64,
    pub computed: f64,
    pub exact: bool,
}

pub fn table_h_scores() -> Vec<MetricRow> {
    TABLE_ROWS
        .iter()
        .map(|&(dataset, method, k, n, h)| {
            let (pred, truth, known, classes) = labeling_for(k, n);
            let m = gcd_metrics(&pred, &truth, &known, classes).expect("metrics");
            let computed = 100.0 * m.h_score.expect("both groups present");
            MetricRow {
                dataset,
                method,
                printed: h,
                computed,
                exact: format!("{computed:.2}") == format!("{h:.2}"),
            }
        })
        .collect()
}

pub fn check_metric_fidelity() -> Check {
    let rows = table_h_scores();
    let mut exact = 0;
    let mut in_band = 0;
    let mut bad = Vec::new();
    let considered = rows
        .iter()
        .filter(|r| (r.dataset, r.method) != INCONSISTENT_ROW)
        .collect::<Vec<_>>();
    for r in &considered {
        if r.exact {
            exact += 1;
        } else if (r.computed - r.printed).abs() <= 0.05 {
            in_band += 1;
        } else {
            bad.push(format!("{}/{} {:.2} vs {:.2}", r.dataset, r.method, r.computed, r.printed));
        }
    }
    let anchors = [("Telecom", "TAN", 63.65, 0.0), ("Scam", "Ours", 50.88, 0.05)];
    let anchors_ok = anchors.iter().all(|(d, m, h, tol)| {
        rows.iter()
            .find(|r| r.dataset == *d && r.method == *m)
            .is_some_and(|r| if *tol == 0.0 { r.exact } else { (r.computed - h).abs() <= *tol })
    });
    Check {
        name: "H-score from printed accuracy pairs",
        passed: exact >= 6 && bad.is_empty() && anchors_ok,
        detail: format!(
            "{exact} of {} rows exact to 2 dp, {in_band} within 0.05, {} outside{}",
            considered.len(),
            bad.len(),
            if bad.is_empty() { String::new() } else { format!(": {}", bad.join(", ")) }
        ),
    }
}

// ---------------------------------------------------------------- assignment

/// Minimum assignment cost by trying every injection of the smaller side
/// into the larger one.
pub fn brute_force_min_cost(cost: &[Vec<f64>]) -> f64 {
    let m = cost.len();
    let n = cost[0].len();
    let transposed;
    let c: &[Vec<f64>] = if m <= n {
        cost
    } else {
        transposed = (0..n).map(|j| (0..m).map(|i| cost[i][j]).collect()).collect::<Vec<Vec<f64>>>();
        &transposed
    };
    fn go(c: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == c.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(c, row + 1, used, acc + c[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(c, 0, &mut vec![false; c[0].len()], 0.0, &mut best);
    best
}

/// Integer-valued matrices so every sum is exact in floating point.
pub fn random_cost_matrix(rng: &mut ChaCha8Rng, max_side: usize) -> Vec<Vec<f64>> {
    let m = rng.random_range(1..=max_side);
    let n = rng.random_range(1..=max_side);
    let hi = rng.random_range(2..50);
    (0..m).map(|_| (0..n).map(|_| rng.random_range(0..hi) as f64).collect()).collect()
}

pub fn check_hungarian(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for t in 0..trials {
        let cost = random_cost_matrix(&mut rng, 7);
        let a = hungarian(&cost).expect("valid matrix");
        let (m, n) = (cost.len(), cost[0].len());
        let rows: BTreeSet<usize> = a.pairs.iter().map(|p| p.0).collect();
        let cols: BTreeSet<usize> = a.pairs.iter().map(|p| p.1).collect();
        let valid = a.pairs.len() == m.min(n) && rows.len() == a.pairs.len() && cols.len() == a.pairs.len();
        let achieved: f64 = a.pairs.iter().map(|&(i, j)| cost[i][j]).sum();
        let best = brute_force_min_cost(&cost);
        if !valid || achieved != best || a.cost != best {
            failures.push(format!("trial {t} ({m}x{n}): got {achieved}, optimum {best}"));
        }
    }
    Check {
        name: "Hungarian vs exhaustive search",
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{trials} random matrices up to 7x7, all optimal")
        } else {
            failures.join("; ")
        },
    }
}

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const TAU: f64 = 0.07;

pub fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(&x);
            x[i] = orig - FD_STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, with an absolute floor for vanishing
/// gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    n(&diff) / n(analytic).max(n(numeric)).max(1e-8)
}

/// Worst relative error over `trials` random instances of one loss.
pub struct GradReport {
    pub name: &'static str,
    pub trials: usize,
    pub worst: f64,
}

fn neg_refs(negs: &[Vec<f64>]) -> Vec<&[f64]> {
    negs.iter().map(Vec::as_slice).collect()
}

/// Splits a flat vector into consecutive pieces of `dim`.
fn unflatten(x: &[f64], dim: usize) -> Vec<Vec<f64>> {
    x.chunks(dim).map(<[f64]>::to_vec).collect()
}

/// Relative error of the full gradient of one contrastive loss over the
/// anchor and every target. `loss(anchor, targets)` puts the positive first.
fn contrastive_error(
    anchor: &[f64],
    targets: &[Vec<f64>],
    loss: impl Fn(&[f64], &[&[f64]]) -> gcd_core::trainer::loss::LossGrad,
) -> f64 {
    let dim = anchor.len();
    let lg = loss(anchor, &neg_refs(targets));
    let analytic: Vec<f64> = lg.grad_anchor.iter().chain(lg.grad_targets.iter().flatten()).copied().collect();
    let flat: Vec<f64> = anchor.iter().chain(targets.iter().flatten()).copied().collect();
    let numeric = numeric_grad(&flat, |x| {
        let parts = unflatten(x, dim);
        loss(&parts[0], &neg_refs(&parts[1..])).loss
    });
    relative_error(&analytic, &numeric)
}

pub fn grad_info_nce(trials: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let dim = rng.random_range(2..12);
        let n_neg = rng.random_range(1..12);
        let a = random_vec(&mut rng, dim);
        let targets: Vec<Vec<f64>> = (0..=n_neg).map(|_| random_vec(&mut rng, dim)).collect();
        let e = contrastive_error(&a, &targets, |x, t| info_nce(x, t[0], &t[1..], TAU).unwrap());
        worst = worst.max(e);
    }
    GradReport {
        name: "instance contrastive",
        trials,
        worst,
    }
}

pub fn grad_prototype(trials: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let dim = rng.random_range(2..12);
        let y = random_vec(&mut rng, dim);
        let targets: Vec<Vec<f64>> = (0..=10).map(|_| random_vec(&mut rng, dim)).collect();
        let w = rng.random_range(0.1..30.0);
        let e = contrastive_error(&y, &targets, |x, t| prototype_loss(x, t[0], &t[1..], TAU, w).unwrap());
        worst = worst.max(e);
    }
    GradReport {
        name: "weighted prototype",
        trials,
        worst,
    }
}

fn random_protos(rng: &mut ChaCha8Rng, classes: impl Iterator<Item = usize>, dim: usize) -> BTreeMap<usize, Vec<f64>> {
    classes.map(|c| (c, random_vec(rng, dim))).collect()
}

/// `novel = true` checks the novel-sample objective; otherwise the sum of
/// both known-sample objectives. Negatives cover the whole family, so the
/// objective is deterministic.
fn grad_pl(trials: usize, seed: u64, novel: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let dim = rng.random_range(2..10);
        let k = 7;
        let known: BTreeSet<usize> = (0..4).collect();
        let up = random_protos(&mut rng, 0..k, dim);
        let lp = random_protos(&mut rng, 0..4, dim);
        let n = rng.random_range(1..5);
        let ys: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, dim)).collect();
        let labels: Vec<usize> = (0..n)
            .map(|_| if novel { rng.random_range(4..k) } else { rng.random_range(0..4) })
            .collect();
        let weights: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 25.0 }).collect();
        let objective = |ys: &[Vec<f64>]| {
            let samples: Vec<PlSample> = ys
                .iter()
                .zip(&labels)
                .zip(&weights)
                .map(|((y, &label), &weight)| PlSample { y, label, weight })
                .collect();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            pl_objectives(&samples, &up, &lp, &known, 10, TAU, &mut r).unwrap()
        };
        let report = objective(&ys);
        let value = |r: &gcd_core::trainer::loss::PlReport| if novel { r.novel } else { r.known() };
        let analytic: Vec<f64> = report.grads.iter().flatten().copied().collect();
        let flat: Vec<f64> = ys.iter().flatten().copied().collect();
        let numeric = numeric_grad(&flat, |x| value(&objective(&unflatten(x, dim))));
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

pub fn grad_novel(trials: usize, seed: u64) -> GradReport {
    GradReport {
        name: "novel prototype objective",
        trials,
        worst: grad_pl(trials, seed, true),
    }
}

pub fn grad_known(trials: usize, seed: u64) -> GradReport {
    GradReport {
        name: "known prototype objective",
        trials,
        worst: grad_pl(trials, seed, false),
    }
}

pub fn grad_ce(trials: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let dim = rng.random_range(2..12);
        let k = rng.random_range(2..8);
        let protos = random_protos(&mut rng, 0..k, dim);
        let label = rng.random_range(0..k);
        let x = random_vec(&mut rng, dim);
        let lg = ce_loss(&x, label, &protos, TAU).unwrap();
        let g = numeric_grad(&x, |v| ce_loss(v, label, &protos, TAU).unwrap().loss);
        worst = worst.max(relative_error(&lg.grad_anchor, &g));
    }
    GradReport {
        name: "cross-entropy",
        trials,
        worst,
    }
}

pub fn check_gradients(trials: usize) -> Check {
    let reports = [
        grad_info_nce(trials, 1),
        grad_prototype(trials, 2),
        grad_novel(trials, 3),
        grad_known(trials, 4),
        grad_ce(trials, 5),
    ];
    Check {
        name: "analytic gradients vs central differences",
        passed: reports.iter().all(|r| r.worst < FD_TOLERANCE),
        detail: reports
            .iter()
            .map(|r| format!("{} worst {:.1e} over {}", r.name, r.worst, r.trials))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

// ---------------------------------------------------------------- ranking

fn stats(id: usize, compactness: f64, size_score: f64, size: usize) -> ClusterStats {
    ClusterStats {
        cluster_id: id,
        size,
        mean_intra_distance: 0.0,
        compactness,
        size_score,
        rank_score: None,
    }
}

pub fn check_ranking() -> Check {
    let mut notes = Vec::new();
    let comp = compactness_scores(&[2.0, 4.0, 6.0]);
    let comp_ok = comp == vec![1.0, 0.5, 0.0];
    notes.push(format!("compactness {comp:?}"));
    let size = size_scores(&[10, 30, 50]);
    let size_ok = size == vec![0.0, 0.5, 1.0];
    notes.push(format!("size {size:?}"));

    // Cluster 0 is compact and small, 1 middling, 2 loose and large.
    let base = vec![stats(0, 1.0, 0.0, 10), stats(1, 0.5, 0.5, 30), stats(2, 0.0, 1.0, 50)];
    let order = |sigma: f64| {
        let mut s = base.clone();
        rank_clusters(&mut s, sigma).unwrap();
        s.iter().map(|c| c.cluster_id).collect::<Vec<_>>()
    };
    let by_comp = order(1.0);
    let by_size = order(0.0);
    let order_ok = by_comp == vec![0, 1, 2] && by_size == vec![2, 1, 0];
    notes.push(format!("sigma=1 {by_comp:?}, sigma=0 {by_size:?}"));

    // Student-t with one degree of freedom: centers at distance 0 and sqrt(3)
    // give kernel values 1 and 1/4, so q = [0.8, 0.2].
    let d = assignment_distribution(&[0.0], &[vec![0.0], vec![3f64.sqrt()]], 1.0);
    let expected_h = -(0.8f64 * 0.8f64.ln() + 0.2 * 0.2f64.ln());
    let q_ok = (d.q[0] - 0.8).abs() < 1e-12 && (d.q[1] - 0.2).abs() < 1e-12;
    let h_ok = (d.entropy - 0.5004).abs() <= 1e-3 && (d.entropy - expected_h).abs() < 1e-12;
    notes.push(format!("q {:?}, H {:.4}", d.q, d.entropy));
    Check {
        name: "ranking and selection fixtures",
        passed: comp_ok && size_ok && order_ok && q_ok && h_ok,
        detail: notes.join("; "),
    }
}

// ---------------------------------------------------------------- synthetic

pub const SYNTH_DATA_SEED: u64 = 1;
pub const RUN_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

pub fn synth_dataset() -> DatasetBundle {
    synth_gcd(&SynthSpec::imbalanced_nine(SYNTH_DATA_SEED, DEFAULT_SYNTH_NOISE)).expect("synthetic data")
}

pub fn scaled_config() -> Config {
    Config {
        epochs: 20,
        interval: 5,
        rho: 1.0,
        ..Config::default()
    }
}

pub struct SeedOutcome {
    pub seed: u64,
    pub baseline: GcdMetrics,
    pub pipeline: GcdMetrics,
}

pub fn run_seed(bundle: &DatasetBundle, seed: u64) -> SeedOutcome {
    let config = scaled_config();
    let baseline = run_baseline(bundle, seed, config.kmeans_runs, config.max_iter).expect("baseline");
    let dir = tempfile::tempdir().expect("tempdir");
    let mut oracle = PatternOracle::new(KeywordMock::default());
    let out = run_training(config, bundle, &mut oracle, seed, dir.path()).expect("training");
    SeedOutcome {
        seed,
        baseline: baseline.metrics,
        pipeline: out.evaluation.metrics,
    }
}

pub fn run_all_seeds() -> (DatasetBundle, Vec<SeedOutcome>) {
    let bundle = synth_dataset();
    let outcomes = RUN_SEEDS.iter().map(|&s| run_seed(&bundle, s)).collect();
    (bundle, outcomes)
}

pub fn check_end_to_end(outcomes: &[SeedOutcome]) -> Check {
    let mean_base_h = outcomes.iter().map(|o| o.baseline.h_score.unwrap()).sum::<f64>() / outcomes.len() as f64;
    let calibrated = (0.45..=0.75).contains(&mean_base_h);
    let mut wins = 0;
    let mut lines = Vec::new();
    for o in outcomes {
        let (bh, bn) = (o.baseline.h_score.unwrap(), o.baseline.acc_n.unwrap());
        let (ph, pn) = (o.pipeline.h_score.unwrap(), o.pipeline.acc_n.unwrap());
        let win = ph - bh >= 0.05 && pn - bn >= 0.05;
        wins += usize::from(win);
        lines.push(format!(
            "seed {}: H {:.3}->{:.3}, ACC_N {:.3}->{:.3}{}",
            o.seed,
            bh,
            ph,
            bn,
            pn,
            if win { "" } else { " (no win)" }
        ));
    }
    Check {
        name: "synthetic end-to-end vs k-means baseline",
        passed: calibrated && wins >= 4,
        detail: format!(
            "baseline mean H {mean_base_h:.3} (target 0.45-0.75); {wins}/5 seeds win by >= 5 points; {}",
            lines.join("; ")
        ),
    }
}

/// The `n` classes with the fewest samples.
pub fn smallest_classes(bundle: &DatasetBundle, n: usize) -> Vec<usize> {
    let mut sizes = vec![0usize; bundle.num_classes];
    for s in &bundle.samples {
        if let Some(l) = s.eval_label() {
            sizes[l] += 1;
        }
    }
    let mut classes: Vec<usize> = (0..bundle.num_classes).collect();
    classes.sort_by_key(|&c| (sizes[c], c));
    classes.truncate(n);
    classes
}

pub fn check_minority_recall(bundle: &DatasetBundle, outcomes: &[SeedOutcome]) -> Check {
    let small = smallest_classes(bundle, 3);
    let sum = |m: &GcdMetrics| small.iter().map(|&c| m.per_class_recall[c].unwrap_or(0.0)).sum::<f64>();
    let base: f64 = outcomes.iter().map(|o| sum(&o.baseline)).sum::<f64>() / (3 * outcomes.len()) as f64;
    let ours: f64 = outcomes.iter().map(|o| sum(&o.pipeline)).sum::<f64>() / (3 * outcomes.len()) as f64;
    Check {
        name: "recall of the three smallest classes",
        passed: ours >= base,
        detail: format!("classes {small:?}: mean recall baseline {base:.3}, pipeline {ours:.3}"),
    }
}

// ---------------------------------------------------------------- determinism

pub fn check_determinism() -> Check {
    let bundle = synth_dataset();
    let mut config = scaled_config();
    config.epochs = 10;
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut oracle = PatternOracle::new(KeywordMock::default());
        run_training(config.clone(), &bundle, &mut oracle, 7, dir.path()).unwrap();
        std::fs::read(dir.path().join("history.jsonl")).unwrap()
    };
    let (a, b) = (run(), run());
    let identical = a == b && !a.is_empty();

    // Resume from a saved checkpoint and compare the next epoch.
    let mut session = Session::new(config.clone(), &bundle, 7).unwrap();
    let mut oracle = PatternOracle::new(KeywordMock::default());
    for _ in 0..3 {
        session.step(&mut oracle).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    session.checkpoint().save(&path).unwrap();
    let restored_ckpt = Checkpoint::load(&path).unwrap();
    let mut restored = Session::from_checkpoint(restored_ckpt, &bundle).unwrap();
    let mut max_diff: f64 = 0.0;
    for _ in 0..3 {
        let x = session.step(&mut oracle).unwrap().losses;
        let y = restored.step(&mut PatternOracle::new(KeywordMock::default())).unwrap().losses;
        for (p, q) in [(x.il, y.il), (x.novel_pl, y.novel_pl), (x.known_pl, y.known_pl), (x.ce, y.ce), (x.total, y.total)] {
            max_diff = max_diff.max((p - q).abs());
        }
    }
    Check {
        name: "determinism and checkpoint round-trip",
        passed: identical && max_diff <= 1e-12,
        detail: format!(
            "history files {} ({} bytes); resumed losses differ by at most {max_diff:.1e} over 3 epochs",
            if identical { "identical" } else { "differ" },
            a.len()
        ),
    }
}

// ---------------------------------------------------------------- prompts

pub const MATCH_CATEGORIES: &[&str] = &[
    "Fraudulent Product Transactions: Scammers post attractive product listings and never deliver.",
    "Game Account/Boosting Service Scams: Scammers offer game items below market price.",
];
pub const MATCH_SAMPLES: &[&str] = &[
    "In CrossFire, the Phantom God sound card - he contacted me on the XX platform.",
    "I paid a deposit for a phone that never arrived.",
];
pub const EXTRACT_REPORTS: &[&str] = &["I saw loan information on a website.", "Initially, I wanted to borrow 70,000 RMB."];
pub const REFINE_PATTERN: &str = "Recharge Scam: victims are promised discounted top-ups.";
pub const REFINE_TP: &[&str] = &["Paid for a phone credit top-up that never arrived."];
pub const REFINE_FP: &[&str] = &["Paid for a video membership recharge that was never activated."];

pub fn golden_prompts() -> [(&'static str, String); 3] {
    [
        ("golden/match_prompt.txt", build_match_prompt(MATCH_CATEGORIES, MATCH_SAMPLES)),
        ("golden/extraction_prompt.txt", build_extraction_prompt(&PromptDomain::default(), EXTRACT_REPORTS)),
        ("golden/refine_prompt.txt", build_refine_prompt(REFINE_PATTERN, REFINE_TP, REFINE_FP)),
    ]
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The section headers and output-format block of the published matching
/// prompt must appear in the built prompt, up to whitespace.
pub fn match_skeleton_present(prompt: &str) -> bool {
    let reference = fixture("fixtures/matching_input.txt");
    let p = squash(prompt);
    let head = reference.split("Category Set:").next().unwrap();
    let rules = reference.split("Classification Rules:").nth(1).unwrap();
    let rules_text = rules.split("Output Format Requirements:").next().unwrap();
    let format_tail = reference.split("including the following fields:").nth(1).unwrap();
    let format_tail = format_tail.replace("```json", "").replace("```", "").replace("{{", "{").replace("}}", "}");
    p.contains(&squash(head))
        && p.contains("Category Set:")
        && p.contains("Text Samples to be Classified:")
        && p.contains(&squash(rules_text))
        && p.contains(&squash(&format_tail))
}

pub fn extraction_skeleton_present(prompt: &str) -> bool {
    let reference = fixture("fixtures/extraction_input.txt");
    let skeleton = reference.split("Report Information:").next().unwrap();
    squash(prompt).contains(&squash(skeleton))
}

pub fn check_prompt_protocol() -> Check {
    let mut notes = Vec::new();
    let mut ok = true;
    for (file, built) in golden_prompts() {
        let same = fixture(file) == built;
        ok &= same;
        notes.push(format!("{file} {}", if same { "matches" } else { "DIFFERS" }));
    }
    let [(_, m), (_, e), _] = golden_prompts();
    let skel = match_skeleton_present(&m) && extraction_skeleton_present(&e);
    ok &= skel;
    notes.push(format!("published skeletons {}", if skel { "present" } else { "MISSING" }));

    let verdicts = parse_match_reply(&fixture("fixtures/matching_reply.txt"), 1);
    let e_ok = matches!(&verdicts, Ok(v) if v.len() == 1 && v[0].index == 1 && v[0].category == CategoryRef::Index(3)
        && v[0].justification.starts_with("The report describes"));
    ok &= e_ok;
    notes.push(format!("matching transcript {}", if e_ok { "parsed" } else { "REJECTED" }));

    let ext = parse_extraction_reply(&fixture("fixtures/extraction_reply.txt"));
    let f_ok = matches!(&ext, Ok(x) if x.name == "Loan Scam"
        && x.description.starts_with("Scammers first post fake loan offers")
        && x.members == (1..=7).collect::<Vec<_>>());
    ok &= f_ok;
    notes.push(format!("extraction transcript {}", if f_ok { "parsed" } else { "REJECTED" }));
    Check {
        name: "prompt protocol conformance",
        passed: ok,
        detail: notes.join("; "),
    }
}
