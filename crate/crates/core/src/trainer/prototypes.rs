//! Class prototypes: a blend of class center and pattern embedding, smoothed
//! across rounds with an exponential moving average.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub class_id: usize,
    pub vector: Vec<f64>,
    pub center_part: Vec<f64>,
    pub pattern_part: Option<Vec<f64>>,
    pub last_update_round: usize,
}

/// `normalize(beta * center + (1 - beta) * pattern)`; the center alone when
/// there is no pattern or the blend cancels out.
pub fn blend(center: &[f64], pattern: Option<&[f64]>, beta: f64) -> Vec<f64> {
    let Some(p) = pattern else {
        return vector::normalized(center).unwrap_or_else(|| center.to_vec());
    };
    let mixed: Vec<f64> = center.iter().zip(p).map(|(c, p)| beta * c + (1.0 - beta) * p).collect();
    vector::normalized(&mixed)
        .or_else(|| vector::normalized(center))
        .unwrap_or(mixed)
}

/// Fresh prototypes for every class with a center.
pub fn build_prototypes(
    centers: &BTreeMap<usize, Vec<f64>>,
    patterns: &BTreeMap<usize, Vec<f64>>,
    beta: f64,
    round: usize,
) -> BTreeMap<usize, Prototype> {
    centers
        .iter()
        .map(|(&c, mu)| {
            let pat = patterns.get(&c);
            let proto = Prototype {
                class_id: c,
                vector: blend(mu, pat.map(Vec::as_slice), beta),
                center_part: mu.clone(),
                pattern_part: pat.cloned(),
                last_update_round: round,
            };
            (c, proto)
        })
        .collect()
}

/// `normalize(omega * previous + (1 - omega) * fresh)`; `fresh` itself when
/// there is no previous value or the mixture vanishes.
pub fn ema_update(previous: Option<&[f64]>, fresh: &[f64], omega: f64) -> Vec<f64> {
    let Some(prev) = previous else {
        return fresh.to_vec();
    };
    let mixed: Vec<f64> = prev.iter().zip(fresh).map(|(p, f)| omega * p + (1.0 - omega) * f).collect();
    vector::normalized(&mixed).unwrap_or_else(|| fresh.to_vec())
}

/// Applies `ema_update` class by class; classes new this round take their
/// fresh value.
pub fn ema_all(
    previous: &BTreeMap<usize, Prototype>,
    mut fresh: BTreeMap<usize, Prototype>,
    omega: f64,
) -> BTreeMap<usize, Prototype> {
    for (c, p) in fresh.iter_mut() {
        p.vector = ema_update(previous.get(c).map(|q| q.vector.as_slice()), &p.vector, omega);
    }
    fresh
}
