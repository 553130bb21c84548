//! Softmax-over-cosine losses with analytic gradients.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;

use super::TrainError;
use crate::vector;

/// A loss value and its gradient with respect to each input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    /// One gradient per target, in the order the targets were given.
    pub grad_targets: Vec<Vec<f64>>,
}

impl LossGrad {
    pub fn scaled(mut self, w: f64) -> Self {
        self.loss *= w;
        self.grad_anchor.iter_mut().for_each(|g| *g *= w);
        for t in &mut self.grad_targets {
            t.iter_mut().for_each(|g| *g *= w);
        }
        self
    }
}

/// `lse - logits[target]`, computed as `ln(1 + sum_{j != target} e^{l_j - l_t})`
/// when the target dominates so that near-zero losses keep full precision.
fn xent_from_logits(logits: &[f64], target: usize, lse: f64) -> f64 {
    let lt = logits[target];
    let max_other = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, &l)| l - lt)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_other < 0.0 {
        let s: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != target)
            .map(|(_, &l)| (l - lt).exp())
            .sum();
        s.ln_1p()
    } else {
        lse - lt
    }
}

/// `-ln softmax_k(cos(anchor, t_j) / tau)` at `k = target`.
pub fn softmax_cosine_xent(anchor: &[f64], targets: &[&[f64]], target: usize, tau: f64) -> Result<LossGrad, TrainError> {
    debug_assert!(target < targets.len() && tau > 0.0);
    let mut logits = Vec::with_capacity(targets.len());
    let mut grads = Vec::with_capacity(targets.len());
    for t in targets {
        let (s, ga, gt) = vector::cosine_with_grad(anchor, t).ok_or(TrainError::ZeroNorm)?;
        logits.push(s / tau);
        grads.push((ga, gt));
    }
    let lse = vector::log_sum_exp(&logits);
    let loss = xent_from_logits(&logits, target, lse);
    let mut grad_anchor = vec![0.0; anchor.len()];
    let mut grad_targets = Vec::with_capacity(targets.len());
    for (j, (ga, gt)) in grads.into_iter().enumerate() {
        let p = (logits[j] - lse).exp();
        let d = (p - if j == target { 1.0 } else { 0.0 }) / tau;
        vector::axpy(&mut grad_anchor, d, &ga);
        grad_targets.push(gt.into_iter().map(|g| g * d).collect());
    }
    Ok(LossGrad {
        loss,
        grad_anchor,
        grad_targets,
    })
}

/// Instance contrastive loss with one positive and `negatives`. Target 0 of
/// the result is the positive.
pub fn info_nce(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], tau: f64) -> Result<LossGrad, TrainError> {
    let mut targets = Vec::with_capacity(negatives.len() + 1);
    targets.push(positive);
    targets.extend_from_slice(negatives);
    softmax_cosine_xent(anchor, &targets, 0, tau)
}

/// Weighted contrastive loss of a sample against its own prototype and
/// prototypes of other classes.
pub fn prototype_loss(
    sample: &[f64],
    own: &[f64],
    negatives: &[&[f64]],
    tau: f64,
    weight: f64,
) -> Result<LossGrad, TrainError> {
    if weight == 0.0 {
        return Ok(LossGrad {
            loss: 0.0,
            grad_anchor: vec![0.0; sample.len()],
            grad_targets: vec![vec![0.0; own.len()]; negatives.len() + 1],
        });
    }
    Ok(info_nce(sample, own, negatives, tau)?.scaled(weight))
}

/// Cross-entropy over cosine logits against the labeled prototypes.
pub fn ce_loss(sample: &[f64], label: usize, prototypes: &BTreeMap<usize, Vec<f64>>, tau: f64) -> Result<LossGrad, TrainError> {
    let target = prototypes
        .keys()
        .position(|&c| c == label)
        .ok_or(TrainError::UnknownLabel(label))?;
    let targets: Vec<&[f64]> = prototypes.values().map(Vec::as_slice).collect();
    softmax_cosine_xent(sample, &targets, target, tau)
}

/// Up to `n` classes from `family` other than `own`: all of them when there
/// are at most `n`, otherwise a uniform draw without replacement. Returned in
/// ascending order.
pub fn choose_negatives<R: Rng>(own: usize, family: &BTreeSet<usize>, n: usize, rng: &mut R) -> Vec<usize> {
    let others: Vec<usize> = family.iter().copied().filter(|&c| c != own).collect();
    if others.len() <= n {
        return others;
    }
    let mut picked: Vec<usize> = index::sample(rng, others.len(), n).into_iter().map(|i| others[i]).collect();
    picked.sort_unstable();
    picked
}

/// One unlabeled sample as seen by the prototype objectives.
#[derive(Debug, Clone, Copy)]
pub struct PlSample<'a> {
    pub y: &'a [f64],
    pub label: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlReport {
    /// Mean over novel-labeled samples (0 when there are none).
    pub novel: f64,
    /// Mean over known-labeled samples against unlabeled-side prototypes.
    pub known_unlabeled: f64,
    /// Mean over known-labeled samples against labeled prototypes.
    pub known_labeled: f64,
    /// Gradient of `novel + known_unlabeled + known_labeled` per sample.
    pub grads: Vec<Vec<f64>>,
}

impl PlReport {
    pub fn known(&self) -> f64 {
        self.known_unlabeled + self.known_labeled
    }
}

fn pl_term<R: Rng>(
    samples: &[PlSample],
    members: &[usize],
    protos: &BTreeMap<usize, Vec<f64>>,
    family: &BTreeSet<usize>,
    negatives: usize,
    tau: f64,
    rng: &mut R,
    grads: &mut [Vec<f64>],
) -> Result<f64, TrainError> {
    if members.is_empty() {
        return Ok(0.0);
    }
    let n = members.len() as f64;
    let mut total = 0.0;
    for &i in members {
        let s = samples[i];
        let own = protos.get(&s.label).ok_or(TrainError::MissingPrototype(s.label))?;
        let neg_ids = choose_negatives(s.label, family, negatives, rng);
        let negs = neg_ids
            .iter()
            .map(|c| protos.get(c).map(Vec::as_slice).ok_or(TrainError::MissingPrototype(*c)))
            .collect::<Result<Vec<_>, _>>()?;
        let lg = prototype_loss(s.y, own, &negs, tau, s.weight)?;
        total += lg.loss / n;
        vector::axpy(&mut grads[i], 1.0 / n, &lg.grad_anchor);
    }
    Ok(total)
}

/// Prototype objectives for a batch of unlabeled samples. `unlabeled_protos`
/// covers every class (known and novel); `labeled_protos` covers known
/// classes. Negatives come from the same prototype family as the target.
pub fn pl_objectives<R: Rng>(
    samples: &[PlSample],
    unlabeled_protos: &BTreeMap<usize, Vec<f64>>,
    labeled_protos: &BTreeMap<usize, Vec<f64>>,
    known: &BTreeSet<usize>,
    negatives: usize,
    tau: f64,
    rng: &mut R,
) -> Result<PlReport, TrainError> {
    let dim = samples.first().map_or(0, |s| s.y.len());
    let mut grads = vec![vec![0.0; dim]; samples.len()];
    let (known_idx, novel_idx): (Vec<usize>, Vec<usize>) =
        (0..samples.len()).partition(|&i| known.contains(&samples[i].label));
    let u_family: BTreeSet<usize> = unlabeled_protos.keys().copied().collect();
    let l_family: BTreeSet<usize> = labeled_protos.keys().copied().collect();
    let novel = pl_term(samples, &novel_idx, unlabeled_protos, &u_family, negatives, tau, rng, &mut grads)?;
    let known_unlabeled = pl_term(samples, &known_idx, unlabeled_protos, &u_family, negatives, tau, rng, &mut grads)?;
    let known_labeled = pl_term(samples, &known_idx, labeled_protos, &l_family, negatives, tau, rng, &mut grads)?;
    Ok(PlReport {
        novel,
        known_unlabeled,
        known_labeled,
        grads,
    })
}
