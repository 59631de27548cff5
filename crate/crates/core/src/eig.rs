//! Symmetric eigendecomposition and spectral-norm estimation.
//!
//! The eigensolver is a cyclic Jacobi iteration: plane rotations annihilate
//! one off-diagonal element at a time and the accumulated rotations form the
//! eigenvector matrix. Jacobi is unconditionally convergent for real
//! symmetric input and the matrices here stay small (a few hundred square at
//! most), so its simplicity wins over QR.
//!
//! The spectral-norm estimator is the two-multiplication power iteration
//! `u = M v0`, `v = M u`, `sigma ~ |v| / |u|`. The estimate is a lower bound
//! on the true spectral norm up to rounding.

use crate::matrix::{Matrix, TensorError};
use crate::rng::normal_matrix;

/// Maximum allowed asymmetry before `sym_eig` refuses the input.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Off-diagonal convergence threshold, relative to the input Frobenius norm.
pub const JACOBI_TOL: f64 = 1e-12;
/// Sweep limit for the cyclic Jacobi iteration.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// `|u|` below this is treated as the zero operator in the power iteration.
pub const POWER_DEGENERATE_TOL: f64 = 1e-12;

/// Eigenvalues in non-increasing order, with paired eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigensystem {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl Eigensystem {
    /// Spectral norm of the decomposed matrix: max |eigenvalue|.
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }
}

fn max_off_diagonal(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut max = 0.0f64;
    for p in 0..n {
        for q in (p + 1)..n {
            max = max.max(m.get(p, q).abs());
        }
    }
    max
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// The input may deviate from exact symmetry by at most [`SYMMETRY_TOL`]; it
/// is symmetrized as `(a + a^T) / 2` before iterating. Rotations run until
/// every off-diagonal magnitude is at most `JACOBI_TOL * |a|_F` or the sweep
/// limit is hit. Eigenvalues are sorted non-increasing; ties keep their
/// post-rotation diagonal order (the sort is stable).
pub fn sym_eig(a: &Matrix) -> Result<Eigensystem, TensorError> {
    let n = a.rows();
    if n != a.cols() {
        return Err(TensorError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }

    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(TensorError::NotSymmetric { deviation: asym });
    }

    let mut m = Matrix::from_fn(n, n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)));
    let mut v = Matrix::identity(n);
    let threshold = JACOBI_TOL * a.frobenius_norm();

    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if max_off_diagonal(&m) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = 0.5 * (m.get(q, q) - m.get(p, p)) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // Rotate rows/columns p and q, keeping full symmetric storage.
                for j in 0..n {
                    let mpj = m.get(p, j);
                    let mqj = m.get(q, j);
                    m.set(p, j, c * mpj - s * mqj);
                    m.set(q, j, s * mpj + c * mqj);
                }
                for i in 0..n {
                    let mip = m.get(i, p);
                    let miq = m.get(i, q);
                    m.set(i, p, c * mip - s * miq);
                    m.set(i, q, s * mip + c * miq);
                }
                // The rotation annihilates (p, q) exactly in real arithmetic.
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);

                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
        if max_off_diagonal(&m) <= threshold {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(TensorError::NoConvergence {
            residual: max_off_diagonal(&m),
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }

    let diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).expect("finite eigenvalues"));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |i, j| v.get(i, order[j]));
    Ok(Eigensystem {
        eigenvalues,
        eigenvectors,
    })
}

/// Two-step power-iteration estimate of the spectral norm of a square matrix,
/// with the start vector drawn from a seeded standard normal.
///
/// Returns 0 when `|M v0|` falls below [`POWER_DEGENERATE_TOL`]: in that case
/// `M` acts as the zero operator on the draw and the estimator's division
/// would otherwise produce NaN for an exactly orthogonal weight residual.
pub fn power_iter_specnorm(m: &Matrix, seed: u64) -> Result<f64, TensorError> {
    if m.rows() != m.cols() {
        return Err(TensorError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let v0 = normal_matrix(m.rows(), 1, seed);
    power_iter_specnorm_with_v0(m, &v0)
}

/// Same estimator with an explicit start vector (column matrix).
pub fn power_iter_specnorm_with_v0(m: &Matrix, v0: &Matrix) -> Result<f64, TensorError> {
    if m.rows() != m.cols() {
        return Err(TensorError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if v0.rows() != m.cols() || v0.cols() != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "power_iter_specnorm",
            left: m.shape(),
            right: v0.shape(),
        });
    }
    let u = m.matmul(v0)?;
    let u_norm = u.frobenius_norm();
    if u_norm < POWER_DEGENERATE_TOL {
        return Ok(0.0);
    }
    let v = m.matmul(&u)?;
    Ok(v.frobenius_norm() / u_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{mix_seed, normal_matrix};

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let a = normal_matrix(n, n, seed);
        a.add(&a.transpose()).unwrap().scale(0.5)
    }

    fn check_reconstruction(a: &Matrix, eig: &Eigensystem) {
        let n = a.rows();
        let v = &eig.eigenvectors;
        let lam = Matrix::from_fn(n, n, |i, j| if i == j { eig.eigenvalues[i] } else { 0.0 });
        let rec = v.matmul(&lam).unwrap().matmul(&v.transpose()).unwrap();
        let err = rec.sub(a).unwrap().frobenius_norm();
        assert!(
            err <= 1e-8 * (1.0 + a.frobenius_norm()),
            "reconstruction error {err}"
        );
        let gram_dev = v
            .transpose()
            .matmul(v)
            .unwrap()
            .sub(&Matrix::identity(n))
            .unwrap()
            .max_abs();
        assert!(gram_dev <= 1e-8, "eigenvector gram deviation {gram_dev}");
    }

    #[test]
    fn diagonal_input() {
        let a = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let eig = sym_eig(&a).unwrap();
        assert_eq!(eig.eigenvalues, vec![3.0, 1.0]);
    }

    #[test]
    fn two_by_two_characteristic_polynomial_oracle() {
        // [[2,1],[1,2]]: trace 4, det 3, roots (4 +- sqrt(16-12))/2 = {3, 1}.
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let eig = sym_eig(&a).unwrap();
        assert!((eig.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-12);
        check_reconstruction(&a, &eig);
    }

    #[test]
    fn identity_has_flat_spectrum() {
        let a = Matrix::identity(5);
        let eig = sym_eig(&a).unwrap();
        assert_eq!(eig.eigenvalues, vec![1.0; 5]);
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        assert!(matches!(
            sym_eig(&Matrix::zeros(2, 3)),
            Err(TensorError::NotSquare { .. })
        ));
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(TensorError::NotSymmetric { .. })));
    }

    #[test]
    fn reconstruction_and_trace_on_random_symmetric() {
        for seed in 0..20u64 {
            let n = 2 + (seed as usize % 9);
            let a = random_symmetric(n, mix_seed(100, &[seed]));
            let eig = sym_eig(&a).unwrap();
            check_reconstruction(&a, &eig);
            let trace = a.trace().unwrap();
            let sum: f64 = eig.eigenvalues.iter().sum();
            assert!((sum - trace).abs() <= 1e-9 * (1.0 + trace.abs()));
            for w in eig.eigenvalues.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn one_by_one_and_zero_matrix() {
        let a = Matrix::from_rows(&[vec![4.5]]).unwrap();
        assert_eq!(sym_eig(&a).unwrap().eigenvalues, vec![4.5]);
        let z = Matrix::zeros(3, 3);
        assert_eq!(sym_eig(&z).unwrap().eigenvalues, vec![0.0; 3]);
    }

    #[test]
    fn power_iteration_zero_matrix() {
        let z = Matrix::zeros(4, 4);
        assert_eq!(power_iter_specnorm(&z, 1).unwrap(), 0.0);
    }

    #[test]
    fn power_iteration_exact_on_rank_one_diagonal() {
        // diag(3, 0): after one multiply the iterate is in the dominant
        // eigenspace, so the ratio is exactly 3 whenever v0[0] != 0.
        let m = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 0.0]]).unwrap();
        for seed in 0..10 {
            let est = power_iter_specnorm(&m, seed).unwrap();
            assert!((est - 3.0).abs() < 1e-12, "estimate {est}");
        }
    }

    #[test]
    fn power_iteration_is_a_lower_bound() {
        for seed in 0..50u64 {
            let n = 2 + (seed as usize % 7);
            let m = random_symmetric(n, mix_seed(7, &[seed]));
            let exact = sym_eig(&m).unwrap().spectral_norm();
            let est = power_iter_specnorm(&m, mix_seed(8, &[seed])).unwrap();
            assert!(est <= exact + 1e-9, "estimate {est} above exact {exact}");
        }
    }

    #[test]
    fn power_iteration_rejects_non_square() {
        assert!(matches!(
            power_iter_specnorm(&Matrix::zeros(2, 3), 0),
            Err(TensorError::NotSquare { .. })
        ));
    }
}
