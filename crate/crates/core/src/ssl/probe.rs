//! Linear probe: multinomial logistic regression on frozen representations.

use crate::matrix::{Matrix, TensorError};
use crate::rng::shuffled_indices;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
}

fn gather_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), m.cols(), |i, j| m.get(rows[i], j))
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    Matrix::from_fn(logits.rows(), logits.cols(), |i, j| {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        (logits.get(i, j) - max).exp() / denom
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Trains a softmax classifier on a seeded 80% split of the representations
/// by full-batch gradient descent and returns accuracy on the held-out 20%.
pub fn linear_probe(
    repr: &Matrix,
    labels: &[usize],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<f64, TensorError> {
    if repr.rows() != labels.len() {
        return Err(TensorError::DataLength {
            expected: repr.rows(),
            got: labels.len(),
        });
    }
    let n = repr.rows();
    if n < 2 {
        return Err(TensorError::InsufficientSamples { rows: n, needed: 2 });
    }
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    {
        let mut seen = vec![false; classes];
        for &l in labels {
            seen[l] = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(TensorError::SingleClass);
        }
    }

    let order = shuffled_indices(n, seed);
    let n_test = (n / 5).max(1);
    let (test_idx, train_idx) = order.split_at(n_test);
    let x_train = gather_rows(repr, train_idx);
    let x_test = gather_rows(repr, test_idx);
    let y_train: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();

    let d = repr.cols();
    let n_train = x_train.rows() as f64;
    let mut w = Matrix::zeros(d, classes);
    let mut b = Matrix::zeros(1, classes);
    for _ in 0..cfg.epochs {
        let mut logits = x_train.matmul(&w)?;
        for i in 0..logits.rows() {
            let cols = logits.cols();
            for j in 0..cols {
                let v = logits.get(i, j) + b.get(0, j);
                logits.set(i, j, v);
            }
        }
        let mut diff = softmax_rows(&logits);
        for (i, &label) in y_train.iter().enumerate() {
            diff.set(i, label, diff.get(i, label) - 1.0);
        }
        let grad_w = x_train.transpose().matmul(&diff)?.scale(1.0 / n_train);
        let grad_b = Matrix::from_fn(1, classes, |_, j| {
            (0..diff.rows()).map(|i| diff.get(i, j)).sum::<f64>() / n_train
        });
        w.add_scaled(-cfg.lr, &grad_w)?;
        b.add_scaled(-cfg.lr, &grad_b)?;
    }

    let mut correct = 0usize;
    let logits = x_test.matmul(&w)?;
    for (i, &label) in y_test.iter().enumerate() {
        let scored: Vec<f64> = (0..classes)
            .map(|j| logits.get(i, j) + b.get(0, j))
            .collect();
        if argmax(&scored) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / y_test.len() as f64)
}
