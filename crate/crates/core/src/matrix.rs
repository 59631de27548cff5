//! Dense row-major `f64` matrices.
//!
//! Every operation accumulates left-to-right per output entry, so results are
//! bit-reproducible across runs and match a naive triple-loop reference
//! exactly. Values are immutable in normal use; in-place mutation is limited
//! to explicit update helpers used by the optimizers.

use std::fmt;

/// Errors raised by matrix, eigensolver, and tape operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Two operands cannot be combined with the given shapes.
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A square matrix was required.
    NotSquare { rows: usize, cols: usize },
    /// Constructor data length does not match `rows * cols`.
    DataLength { expected: usize, got: usize },
    /// A NaN or infinity was found at the given flat index.
    NonFinite { index: usize },
    /// An operation over sample rows needs more rows than were given.
    InsufficientSamples { rows: usize, needed: usize },
    /// Symmetry deviation above tolerance for a symmetric-only operation.
    NotSymmetric { deviation: f64 },
    /// An iterative solver hit its sweep limit.
    NoConvergence { residual: f64, sweeps: usize },
    /// A scalar (1x1) value was required.
    NotScalar { rows: usize, cols: usize },
    /// A spectrum with at least one positive eigenvalue was required.
    NoPositiveEigenvalue,
    /// Labels containing at least two classes were required.
    SingleClass,
    /// A non-empty matrix was required.
    Empty { what: &'static str },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, left, right } => write!(
                f,
                "{op}: incompatible shapes {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
            TensorError::NotSquare { rows, cols } => {
                write!(f, "square matrix required, got {rows}x{cols}")
            }
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match rows*cols = {expected}")
            }
            TensorError::NonFinite { index } => {
                write!(f, "non-finite value at flat index {index}")
            }
            TensorError::InsufficientSamples { rows, needed } => {
                write!(f, "need at least {needed} sample rows, got {rows}")
            }
            TensorError::NotSymmetric { deviation } => {
                write!(f, "matrix is not symmetric (max |a - a^T| = {deviation:e})")
            }
            TensorError::NoConvergence { residual, sweeps } => write!(
                f,
                "eigensolver did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})"
            ),
            TensorError::NotScalar { rows, cols } => {
                write!(f, "scalar (1x1) value required, got {rows}x{cols}")
            }
            TensorError::NoPositiveEigenvalue => {
                write!(f, "spectrum has no positive eigenvalue")
            }
            TensorError::SingleClass => write!(f, "labels contain fewer than two classes"),
            TensorError::Empty { what } => write!(f, "{what} must be non-empty"),
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::DataLength {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::DataLength {
                    expected: c,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Column vector from a slice.
    pub fn column(v: &[f64]) -> Matrix {
        Matrix {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product with deterministic left-to-right accumulation per entry.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        if self.cols != rhs.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        let n = rhs.cols;
        for i in 0..self.rows {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = &rhs.data[k * n..(k + 1) * n];
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        rhs: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, TensorError> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| c * v).collect(),
        }
    }

    /// `self += c * rhs`, used by gradient-descent updates.
    pub fn add_scaled(&mut self, c: f64, rhs: &Matrix) -> Result<(), TensorError> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add_scaled",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn add_in_place(&mut self, rhs: &Matrix) -> Result<(), TensorError> {
        self.add_scaled(1.0, rhs)
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn trace(&self) -> Result<f64, TensorError> {
        if self.rows != self.cols {
            return Err(TensorError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok((0..self.rows).map(|i| self.data[i * self.cols + i]).sum())
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, &v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        for m in &mut means {
            *m /= n;
        }
        means
    }

    /// `Xc^T Xc` where `Xc` is `self` with column means removed.
    pub fn centered_gram(&self) -> Result<Matrix, TensorError> {
        if self.rows < 2 {
            return Err(TensorError::InsufficientSamples {
                rows: self.rows,
                needed: 2,
            });
        }
        let means = self.column_means();
        let mut centered = self.clone();
        for i in 0..self.rows {
            let row = &mut centered.data[i * self.cols..(i + 1) * self.cols];
            for (v, &m) in row.iter_mut().zip(&means) {
                *v -= m;
            }
        }
        centered.transpose().matmul(&centered)
    }

    /// Sample covariance over rows (samples) with the `N - 1` divisor.
    pub fn covariance(&self) -> Result<Matrix, TensorError> {
        let gram = self.centered_gram()?;
        Ok(gram.scale(1.0 / (self.rows as f64 - 1.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn identity_matmul_is_identity_map() {
        let a = Matrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![7.0, 8.0, 9.0],
        ])
        .unwrap();
        let i3 = Matrix::identity(3);
        assert_eq!(i3.matmul(&a).unwrap(), a);
        assert_eq!(a.matmul(&i3).unwrap(), a);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c, Matrix::from_rows(&[vec![2.0], vec![4.0]]).unwrap());
    }

    #[test]
    fn matmul_matches_triple_loop_oracle_bitwise() {
        let a = crate::rng::normal_matrix(5, 4, 11);
        let b = crate::rng::normal_matrix(4, 3, 12);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        assert_eq!(fast.data(), slow.data());
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(
            a.matmul(&b),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn from_vec_validates() {
        assert!(matches!(
            Matrix::from_vec(2, 2, vec![1.0; 3]),
            Err(TensorError::DataLength { expected: 4, got: 3 })
        ));
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn covariance_closed_form() {
        // Rows (1,0), (-1,0), (0,2), (0,-2): zero means, variances 2/3 and 8/3.
        let t = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 2.0],
            vec![0.0, -2.0],
        ])
        .unwrap();
        let c = t.covariance().unwrap();
        assert!((c.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.get(1, 1) - 8.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(1, 0), 0.0);
    }

    #[test]
    fn covariance_of_constant_rows_is_zero() {
        let t = Matrix::from_rows(&[vec![3.0, -1.0], vec![3.0, -1.0], vec![3.0, -1.0]]).unwrap();
        let c = t.covariance().unwrap();
        assert_eq!(c.max_abs(), 0.0);
    }

    #[test]
    fn covariance_needs_two_rows() {
        let t = Matrix::zeros(1, 4);
        assert!(matches!(
            t.covariance(),
            Err(TensorError::InsufficientSamples { rows: 1, needed: 2 })
        ));
    }

    #[test]
    fn covariance_is_bitwise_symmetric() {
        let t = crate::rng::normal_matrix(50, 4, 7);
        let c = t.covariance().unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(c.get(i, j), c.get(j, i));
            }
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let a = crate::rng::normal_matrix(3, 5, 21);
        assert_eq!(a.transpose().transpose(), a);
    }
}
