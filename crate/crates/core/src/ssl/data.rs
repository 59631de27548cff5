//! Synthetic datasets and view augmentation.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::matrix::Matrix;
use crate::rng::{mix_seed, rng_from_seed};

/// Gaussian-mixture dataset description.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub n_samples: usize,
    pub dim: usize,
    pub n_clusters: usize,
    pub cluster_std: f64,
}

/// Draws a Gaussian mixture: cluster centers uniform in `[-3, 3]^dim`,
/// points at `center + N(0, cluster_std^2)`, labels assigned round-robin.
/// Deterministic given the seed.
pub fn gen_synthetic(cfg: &DataConfig, seed: u64) -> (Matrix, Vec<usize>) {
    assert!(cfg.n_clusters >= 2, "need at least two clusters");
    assert!(cfg.dim >= 1 && cfg.n_samples >= 1);
    let mut center_rng = rng_from_seed(mix_seed(seed, &[1]));
    let centers = Matrix::from_fn(cfg.n_clusters, cfg.dim, |_, _| center_rng.gen_range(-3.0..3.0));

    let mut point_rng = rng_from_seed(mix_seed(seed, &[2]));
    let mut labels = Vec::with_capacity(cfg.n_samples);
    let data = Matrix::from_fn(cfg.n_samples, cfg.dim, |i, j| {
        let label = i % cfg.n_clusters;
        if j == 0 {
            labels.push(label);
        }
        let noise: f64 = point_rng.sample(StandardNormal);
        centers.get(label, j) + cfg.cluster_std * noise
    });
    (data, labels)
}

/// View augmentation: additive Gaussian noise followed by independent
/// per-coordinate zero masking.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub noise_std: f64,
    pub mask_prob: f64,
}

/// Applies the augmentation with its own seeded stream. Two calls with
/// different seeds produce the two views of a batch.
pub fn augment(x: &Matrix, cfg: &AugmentConfig, seed: u64) -> Matrix {
    debug_assert!(cfg.noise_std >= 0.0);
    debug_assert!((0.0..=1.0).contains(&cfg.mask_prob));
    let mut rng = rng_from_seed(seed);
    let mut out = x.clone();
    if cfg.noise_std > 0.0 {
        for v in out.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += cfg.noise_std * z;
        }
    }
    if cfg.mask_prob > 0.0 {
        for v in out.data_mut() {
            if rng.gen_range(0.0..1.0) < cfg.mask_prob {
                *v = 0.0;
            }
        }
    }
    out
}
