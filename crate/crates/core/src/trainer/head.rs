//! Affine projection head `f(x) = normalize(W x + b)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    /// `out_dim` rows of length `in_dim`.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Gradient with the same shape as the head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl HeadGrad {
    pub fn zeros_like(head: &ProjectionHead) -> Self {
        Self {
            w: vec![vec![0.0; head.in_dim()]; head.out_dim()],
            b: vec![0.0; head.out_dim()],
        }
    }
}

/// Forward pass intermediates needed by `backward`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub y: Vec<f64>,
    pub z_norm: f64,
}

/// Orthonormalizes `rows` in place (modified Gram-Schmidt). Rows that
/// collapse are redrawn from `rng`.
fn gram_schmidt(rows: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    for i in 0..rows.len() {
        loop {
            for j in 0..i {
                let (done, rest) = rows.split_at_mut(i);
                let d = vector::dot(&rest[0], &done[j]);
                vector::axpy(&mut rest[0], -d, &done[j]);
            }
            if vector::norm(&rows[i]) > 1e-8 && vector::normalize_in_place(&mut rows[i]) {
                break;
            }
            rows[i] = (0..rows[i].len()).map(|_| StandardNormal.sample(rng)).collect();
        }
    }
}

impl ProjectionHead {
    pub fn identity(dim: usize) -> Self {
        let w = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { w, b: vec![0.0; dim] }
    }

    /// Identity when the dimensions agree, otherwise a random matrix with
    /// orthonormal rows (or columns, when `out_dim > in_dim`) drawn from `seed`.
    pub fn init(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        if in_dim == out_dim {
            return Self::identity(in_dim);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = (out_dim.min(in_dim), out_dim.max(in_dim));
        let mut m: Vec<Vec<f64>> = (0..r)
            .map(|_| (0..c).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        gram_schmidt(&mut m, &mut rng);
        let w = if out_dim <= in_dim {
            m
        } else {
            (0..out_dim).map(|i| (0..in_dim).map(|j| m[j][i]).collect()).collect()
        };
        Self { w, b: vec![0.0; out_dim] }
    }

    pub fn in_dim(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn out_dim(&self) -> usize {
        self.w.len()
    }

    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.w.iter().zip(&self.b).map(|(row, b)| vector::dot(row, x) + b).collect()
    }

    /// `None` when `W x + b` is the zero vector.
    pub fn forward(&self, x: &[f64]) -> Option<Forward> {
        let z = self.pre_activation(x);
        let z_norm = vector::norm(&z);
        let y = vector::normalized(&z)?;
        Some(Forward { y, z_norm })
    }

    /// Projected, unit-norm embedding. Falls back to the normalized input if
    /// the projection degenerates (dimensions permitting).
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match self.forward(x) {
            Some(f) => f.y,
            None => vec![0.0; self.out_dim()],
        }
    }

    /// Accumulates the parameter gradient for one input given `dL/dy`.
    pub fn backward(&self, x: &[f64], fwd: &Forward, grad_y: &[f64], acc: &mut HeadGrad) {
        // y = z / |z|  =>  dL/dz = (g - y (y . g)) / |z|
        let yg = vector::dot(&fwd.y, grad_y);
        for (i, (row, gb)) in acc.w.iter_mut().zip(acc.b.iter_mut()).enumerate() {
            let gz = (grad_y[i] - fwd.y[i] * yg) / fwd.z_norm;
            *gb += gz;
            vector::axpy(row, gz, x);
        }
    }
}
