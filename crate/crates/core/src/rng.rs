//! Seeded sampling utilities.
//!
//! All randomness in the crate flows through explicit `u64` seeds so that
//! every loss evaluation and every training run is a pure function of its
//! config. Derived streams are produced by [`mix_seed`], a splitmix64-based
//! combiner that stays stable across library versions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matrix::Matrix;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derives a child seed from a base seed and a list of stream tags/indices.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &p in parts {
        state = splitmix64(state ^ p.wrapping_mul(0x9e3779b97f4a7c15));
    }
    state
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix with i.i.d. standard-normal entries drawn in row-major order.
pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Matrix with i.i.d. uniform entries in `[lo, hi)`.
pub fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

/// Random square orthogonal matrix via modified Gram-Schmidt on a Gaussian
/// draw, with one re-orthogonalization pass.
pub fn random_orthogonal(n: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let mut q = Matrix::zeros(n, n);
    let mut col = vec![0.0; n];
    for j in 0..n {
        loop {
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            // Two orthogonalization passes keep Q^T Q - I near machine epsilon.
            for _ in 0..2 {
                for prev in 0..j {
                    let dot: f64 = (0..n).map(|i| q.get(i, prev) * col[i]).sum();
                    for (i, v) in col.iter_mut().enumerate() {
                        *v -= dot * q.get(i, prev);
                    }
                }
            }
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (i, v) in col.iter().enumerate() {
                    q.set(i, j, v / norm);
                }
                break;
            }
            // Degenerate draw (probability ~0): redraw the column.
        }
    }
    q
}

/// Matrix with orthonormal columns whose column means are all zero.
/// Requires `rows > cols` (the all-ones direction is excluded).
pub fn random_orthonormal_zero_mean(rows: usize, cols: usize, seed: u64) -> Matrix {
    assert!(rows > cols, "zero-mean orthonormal columns need rows > cols");
    let mut rng = rng_from_seed(seed);
    let mut q = Matrix::zeros(rows, cols);
    let mut col = vec![0.0; rows];
    for j in 0..cols {
        loop {
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for _ in 0..2 {
                // Project out the all-ones direction to force zero column mean.
                let mean: f64 = col.iter().sum::<f64>() / rows as f64;
                for v in col.iter_mut() {
                    *v -= mean;
                }
                for prev in 0..j {
                    let dot: f64 = (0..rows).map(|i| q.get(i, prev) * col[i]).sum();
                    for (i, v) in col.iter_mut().enumerate() {
                        *v -= dot * q.get(i, prev);
                    }
                }
            }
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (i, v) in col.iter().enumerate() {
                    q.set(i, j, v / norm);
                }
                break;
            }
        }
    }
    q
}

/// Deterministic Fisher-Yates permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
