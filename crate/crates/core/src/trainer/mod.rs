//! Projection head training: losses, prototypes and the epoch loop.

pub mod head;
pub mod loss;
pub mod prototypes;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use head::{HeadGrad, ProjectionHead};
use loss::PlSample;

use crate::vector;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("zero-norm vector in a loss")]
    ZeroNorm,
    #[error("no prototype for class {0}")]
    MissingPrototype(usize),
    #[error("label {0} is not a known class")]
    UnknownLabel(usize),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("projection collapsed to zero for an input")]
    DegenerateProjection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub beta: f64,
    pub omega: f64,
    pub rho: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            beta: 0.8,
            omega: 0.9,
            rho: 1.0,
            negatives: 10,
            batch_size: 32,
            learning_rate: 1e-5,
            momentum: 0.0,
            epochs: 50,
        }
    }
}

/// Stochastic gradient descent with optional heavy-ball momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub velocity: Option<(Vec<Vec<f64>>, Vec<f64>)>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, head: &mut ProjectionHead, grad: &HeadGrad) {
        if self.learning_rate == 0.0 {
            return;
        }
        if self.momentum == 0.0 {
            for (row, g) in head.w.iter_mut().zip(&grad.w) {
                vector::axpy(row, -self.learning_rate, g);
            }
            vector::axpy(&mut head.b, -self.learning_rate, &grad.b);
            return;
        }
        let (vw, vb) = self
            .velocity
            .get_or_insert_with(|| (vec![vec![0.0; head.in_dim()]; head.out_dim()], vec![0.0; head.out_dim()]));
        for ((row, v), g) in head.w.iter_mut().zip(vw.iter_mut()).zip(&grad.w) {
            for ((w, v), g) in row.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.momentum * *v + g;
                *w -= self.learning_rate * *v;
            }
        }
        for ((b, v), g) in head.b.iter_mut().zip(vb.iter_mut()).zip(&grad.b) {
            *v = self.momentum * *v + g;
            *b -= self.learning_rate * *v;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UnlabeledItem<'a> {
    pub x: &'a [f64],
    pub label: usize,
    /// Prototype-loss weight (rho for changed pseudo-labels).
    pub weight: f64,
    /// Whether the oracle reviewed this sample; only those anchor the
    /// instance loss.
    pub processed: bool,
}

#[derive(Debug, Clone)]
pub struct EpochData<'a> {
    pub unlabeled: Vec<UnlabeledItem<'a>>,
    pub labeled: Vec<(&'a [f64], usize)>,
    pub unlabeled_protos: &'a BTreeMap<usize, Vec<f64>>,
    pub labeled_protos: &'a BTreeMap<usize, Vec<f64>>,
    pub known: &'a BTreeSet<usize>,
}

/// Per-term means over the steps of one epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub il: f64,
    pub novel_pl: f64,
    pub known_pl: f64,
    pub ce: f64,
    pub total: f64,
    pub steps: usize,
}

/// Normalized per-class means of the projected labeled embeddings.
pub fn labeled_prototypes(head: &ProjectionHead, labeled: &[(&[f64], usize)]) -> BTreeMap<usize, Vec<f64>> {
    let mut sums: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (x, c) in labeled {
        let y = head.project(x);
        vector::axpy(sums.entry(*c).or_insert_with(|| vec![0.0; y.len()]), 1.0, &y);
    }
    sums.into_iter()
        .filter_map(|(c, s)| vector::normalized(&s).map(|v| (c, v)))
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    U(usize),
    L(usize),
}

struct StepCache<'h> {
    head: &'h ProjectionHead,
    fwd: HashMap<Key, head::Forward>,
    grad: HashMap<Key, Vec<f64>>,
}

impl<'h> StepCache<'h> {
    fn y(&mut self, key: Key, x: &[f64]) -> Result<Vec<f64>, TrainError> {
        if let Some(f) = self.fwd.get(&key) {
            return Ok(f.y.clone());
        }
        let f = self.head.forward(x).ok_or(TrainError::DegenerateProjection)?;
        let y = f.y.clone();
        self.fwd.insert(key, f);
        Ok(y)
    }

    fn add_grad(&mut self, key: Key, scale: f64, g: &[f64]) {
        let acc = self.grad.entry(key).or_insert_with(|| vec![0.0; g.len()]);
        vector::axpy(acc, scale, g);
    }
}

/// Uniformly drawn distinct samples whose label differs from `label`; all
/// of them when there are at most `n`.
fn sample_negatives<R: Rng>(items: &[UnlabeledItem], by_label: &BTreeMap<usize, Vec<usize>>, label: usize, n: usize, rng: &mut R) -> Vec<usize> {
    let others = items.len() - by_label.get(&label).map_or(0, Vec::len);
    if others <= n {
        return (0..items.len()).filter(|&j| items[j].label != label).collect();
    }
    let mut picked = Vec::with_capacity(n);
    while picked.len() < n {
        let j = rng.random_range(0..items.len());
        if items[j].label != label && !picked.contains(&j) {
            picked.push(j);
        }
    }
    picked
}

fn run_epoch<R: Rng>(
    head: &mut ProjectionHead,
    mut opt: Option<&mut Sgd>,
    data: &EpochData,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<LossReport, TrainError> {
    let nu = data.unlabeled.len();
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, it) in data.unlabeled.iter().enumerate() {
        by_label.entry(it.label).or_default().push(i);
    }
    let mut order: Vec<usize> = (0..nu).collect();
    order.shuffle(rng);
    let mut lab_order: Vec<usize> = (0..data.labeled.len()).collect();
    lab_order.shuffle(rng);
    let bs = cfg.batch_size.max(1);
    let steps = nu.div_ceil(bs).max(usize::from(nu == 0 && !data.labeled.is_empty()));
    let mut report = LossReport::default();

    for step in 0..steps {
        let batch: &[usize] = &order[(step * bs).min(nu)..((step + 1) * bs).min(nu)];
        let lab_batch: Vec<usize> = if lab_order.is_empty() {
            Vec::new()
        } else {
            (0..bs.min(lab_order.len()))
                .map(|k| lab_order[(step * bs + k) % lab_order.len()])
                .collect()
        };
        let mut cache = StepCache {
            head,
            fwd: HashMap::new(),
            grad: HashMap::new(),
        };

        // Instance loss over oracle-reviewed anchors.
        let anchors: Vec<usize> = batch.iter().copied().filter(|&i| data.unlabeled[i].processed).collect();
        let mut il = 0.0;
        let mut il_terms = Vec::new();
        for &i in &anchors {
            let label = data.unlabeled[i].label;
            let peers = &by_label[&label];
            if peers.len() < 2 {
                continue;
            }
            let pos = loop {
                let j = peers[rng.random_range(0..peers.len())];
                if j != i {
                    break j;
                }
            };
            let negs = sample_negatives(&data.unlabeled, &by_label, label, cfg.negatives, rng);
            if negs.is_empty() {
                continue;
            }
            il_terms.push((i, pos, negs));
        }
        if !il_terms.is_empty() {
            let scale = 1.0 / il_terms.len() as f64;
            for (i, pos, negs) in &il_terms {
                let a = cache.y(Key::U(*i), data.unlabeled[*i].x)?;
                let p = cache.y(Key::U(*pos), data.unlabeled[*pos].x)?;
                let ns = negs
                    .iter()
                    .map(|&j| cache.y(Key::U(j), data.unlabeled[j].x))
                    .collect::<Result<Vec<_>, _>>()?;
                let refs: Vec<&[f64]> = ns.iter().map(Vec::as_slice).collect();
                let lg = loss::info_nce(&a, &p, &refs, cfg.tau)?;
                il += lg.loss * scale;
                cache.add_grad(Key::U(*i), scale, &lg.grad_anchor);
                cache.add_grad(Key::U(*pos), scale, &lg.grad_targets[0]);
                for (j, g) in negs.iter().zip(&lg.grad_targets[1..]) {
                    cache.add_grad(Key::U(*j), scale, g);
                }
            }
        }

        // Prototype objectives.
        let ys = batch
            .iter()
            .map(|&i| cache.y(Key::U(i), data.unlabeled[i].x))
            .collect::<Result<Vec<_>, _>>()?;
        let pl_samples: Vec<PlSample> = batch
            .iter()
            .zip(&ys)
            .map(|(&i, y)| PlSample {
                y,
                label: data.unlabeled[i].label,
                weight: data.unlabeled[i].weight,
            })
            .collect();
        let pl = loss::pl_objectives(
            &pl_samples,
            data.unlabeled_protos,
            data.labeled_protos,
            data.known,
            cfg.negatives,
            cfg.tau,
            rng,
        )?;
        for (&i, g) in batch.iter().zip(&pl.grads) {
            cache.add_grad(Key::U(i), 1.0, g);
        }

        // Supervised term on labeled data.
        let mut ce = 0.0;
        if !lab_batch.is_empty() && !data.labeled_protos.is_empty() {
            let scale = 1.0 / lab_batch.len() as f64;
            for &l in &lab_batch {
                let (x, c) = data.labeled[l];
                let y = cache.y(Key::L(l), x)?;
                let lg = loss::ce_loss(&y, c, data.labeled_protos, cfg.tau)?;
                ce += lg.loss * scale;
                cache.add_grad(Key::L(l), scale, &lg.grad_anchor);
            }
        }

        let total = il + pl.novel + pl.known() + ce;
        if !total.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                detail: format!("il={il} novel={} known={} ce={ce}", pl.novel, pl.known()),
            });
        }
        report.il += il;
        report.novel_pl += pl.novel;
        report.known_pl += pl.known();
        report.ce += ce;
        report.total += total;
        report.steps += 1;

        if let Some(opt) = opt.as_deref_mut() {
            let mut grad = HeadGrad::zeros_like(cache.head);
            let mut keys: Vec<&Key> = cache.grad.keys().collect();
            // Fixed accumulation order keeps floating-point sums reproducible.
            keys.sort_by_key(|k| match k {
                Key::U(i) => (0, *i),
                Key::L(i) => (1, *i),
            });
            for k in keys {
                let x = match *k {
                    Key::U(i) => data.unlabeled[i].x,
                    Key::L(i) => data.labeled[i].0,
                };
                cache.head.backward(x, &cache.fwd[k], &cache.grad[k], &mut grad);
            }
            drop(cache);
            opt.step(head, &grad);
        }
    }
    if report.steps > 0 {
        let n = report.steps as f64;
        report.il /= n;
        report.novel_pl /= n;
        report.known_pl /= n;
        report.ce /= n;
        report.total /= n;
    }
    Ok(report)
}

/// One pass over the unlabeled data in mini-batches, stepping `opt` after each.
pub fn train_epoch<R: Rng>(
    head: &mut ProjectionHead,
    opt: &mut Sgd,
    data: &EpochData,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<LossReport, TrainError> {
    run_epoch(head, Some(opt), data, cfg, rng)
}

/// Same batches and sampling as `train_epoch` without any parameter update.
pub fn evaluate_epoch<R: Rng>(
    head: &ProjectionHead,
    data: &EpochData,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<LossReport, TrainError> {
    let mut h = head.clone();
    run_epoch(&mut h, None, data, cfg, rng)
}
