//! Hungarian-aligned accuracy and the known/novel H-score.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{self, AlignError};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{predicted} predictions for {truth} labels")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("label {label} outside [0, {k})")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Align(#[from] AlignError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub accuracy: f64,
    /// `permutation[p]` is the true class that predicted id `p` maps to.
    pub permutation: Vec<usize>,
}

/// `counts[p][t]`: samples predicted `p` with truth `t`.
pub fn contingency(predicted: &[usize], truth: &[usize], k: usize) -> Result<Vec<Vec<usize>>, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        for label in [p, t] {
            if label >= k {
                return Err(EvalError::LabelOutOfRange { label, k });
            }
        }
        m[p][t] += 1;
    }
    Ok(m)
}

/// Accuracy under the one-to-one relabeling of predictions that maximizes
/// the number of matches.
pub fn aligned_accuracy(predicted: &[usize], truth: &[usize], k: usize) -> Result<Aligned, EvalError> {
    let m = contingency(predicted, truth, k)?;
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let cost: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|&c| -(c as f64)).collect()).collect();
    let a = alignment::hungarian(&cost)?;
    let mut permutation = vec![0; k];
    let mut hits = 0;
    for &(p, t) in &a.pairs {
        permutation[p] = t;
        hits += m[p][t];
    }
    Ok(Aligned {
        accuracy: hits as f64 / predicted.len() as f64,
        permutation,
    })
}

/// Harmonic mean of two accuracies; 0 when either is 0.
pub fn h_score(acc_k: f64, acc_n: f64) -> f64 {
    if acc_k <= 0.0 || acc_n <= 0.0 {
        0.0
    } else {
        2.0 * acc_k * acc_n / (acc_k + acc_n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcdMetrics {
    pub acc_k: Option<f64>,
    pub acc_n: Option<f64>,
    pub h_score: Option<f64>,
    pub acc_all: f64,
    pub n_test: usize,
    pub permutation: Vec<usize>,
    /// Recall per true class after alignment; `None` for absent classes.
    pub per_class_recall: Vec<Option<f64>>,
}

/// Known- and novel-class accuracy under a single global alignment.
pub fn gcd_metrics(predicted: &[usize], truth: &[usize], known: &BTreeSet<usize>, k: usize) -> Result<GcdMetrics, EvalError> {
    let aligned = aligned_accuracy(predicted, truth, k)?;
    let mut hit = vec![0usize; k];
    let mut total = vec![0usize; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        total[t] += 1;
        if aligned.permutation[p] == t {
            hit[t] += 1;
        }
    }
    let subset = |want_known: bool| {
        let (h, n) = (0..k)
            .filter(|c| known.contains(c) == want_known)
            .fold((0, 0), |(h, n), c| (h + hit[c], n + total[c]));
        (n > 0).then(|| h as f64 / n as f64)
    };
    let acc_k = subset(true);
    let acc_n = subset(false);
    Ok(GcdMetrics {
        acc_k,
        acc_n,
        h_score: acc_k.zip(acc_n).map(|(a, b)| h_score(a, b)),
        acc_all: aligned.accuracy,
        n_test: predicted.len(),
        permutation: aligned.permutation,
        per_class_recall: (0..k)
            .map(|c| (total[c] > 0).then(|| hit[c] as f64 / total[c] as f64))
            .collect(),
    })
}

/// Writes the confusion matrix with predicted ids mapped through
/// `permutation`: rows are true classes, columns aligned predictions.
pub fn write_confusion_csv<W: Write>(predicted: &[usize], truth: &[usize], permutation: &[usize], k: usize, mut out: W) -> std::io::Result<()> {
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        m[t][permutation[p]] += 1;
    }
    let header: Vec<String> = (0..k).map(|c| format!("pred_{c}")).collect();
    writeln!(out, "true,{}", header.join(","))?;
    for (t, row) in m.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        writeln!(out, "{t},{}", cells.join(","))?;
    }
    Ok(())
}
