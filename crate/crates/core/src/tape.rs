//! Reverse-mode differentiation over matrix operations.
//!
//! A [`Tape`] records primitive operations eagerly: each call computes the
//! forward value immediately and appends a node. Because operands must exist
//! before they are used, node order is already a topological order, and the
//! backward pass simply walks the node list in reverse, accumulating adjoints.
//!
//! The tape is single-writer: one recording plus one backward pass at a time.
//! Independent tapes can run on separate threads freely. Replaying a recorded
//! tape re-executes the same kernels in the same order, so the recorded loss
//! is reproduced bit-identically.

use crate::matrix::{Matrix, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Differentiable leaf.
    Param,
    /// Non-differentiable leaf.
    Const,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product (same shape).
    Mul(NodeId, NodeId),
    /// Elementwise quotient (same shape).
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    /// Row-major reinterpretation to a new shape of equal size.
    Reshape(NodeId, usize, usize),
    /// Diagonal of a square matrix as a column vector.
    TakeDiag(NodeId),
    /// Sum of squared entries, as a 1x1 matrix.
    FrobSq(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Row sums as an n x 1 column.
    RowSum(NodeId),
    /// Column sums as a 1 x m row.
    ColSum(NodeId),
    /// Column means as a 1 x m row.
    ColMean(NodeId),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Adjoints produced by a backward pass, indexed by node.
pub struct TapeGradients {
    adjoints: Vec<Option<Matrix>>,
}

impl TapeGradients {
    /// Adjoint of the loss w.r.t. the given node, if the node influenced it.
    pub fn wrt(&self, id: NodeId) -> Option<&Matrix> {
        self.adjoints.get(id.0).and_then(|a| a.as_ref())
    }
}

/// Recording tape for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable parameter leaf.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Param, value)
    }

    /// Registers a constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Forward value of a 1x1 node as a plain scalar.
    pub fn scalar(&self, id: NodeId) -> Result<f64, TensorError> {
        let v = self.value(id);
        if v.shape() != (1, 1) {
            return Err(TensorError::NotScalar {
                rows: v.rows(),
                cols: v.cols(),
            });
        }
        Ok(v.get(0, 0))
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).shape()
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("mul", a, b)?;
        let value = self.elementwise2(a, b, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("div", a, b)?;
        let value = self.elementwise2(a, b, |x, y| x / y);
        Ok(self.push(Op::Div(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).scale(c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.elementwise1(a, |x| x + c);
        self.push(Op::AddScalar(a, c), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.elementwise1(a, f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.elementwise1(a, |x| x.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.elementwise1(a, f64::exp);
        self.push(Op::Exp(a), value)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let value = self.elementwise1(a, f64::ln);
        self.push(Op::Ln(a), value)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let value = self.elementwise1(a, f64::sqrt);
        self.push(Op::Sqrt(a), value)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        if v.rows() * v.cols() != rows * cols {
            return Err(TensorError::DataLength {
                expected: rows * cols,
                got: v.rows() * v.cols(),
            });
        }
        let value = reshape_matrix(v, rows, cols);
        Ok(self.push(Op::Reshape(a, rows, cols), value))
    }

    pub fn take_diag(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        if v.rows() != v.cols() {
            return Err(TensorError::NotSquare {
                rows: v.rows(),
                cols: v.cols(),
            });
        }
        let value = Matrix::from_fn(v.rows(), 1, |i, _| v.get(i, i));
        Ok(self.push(Op::TakeDiag(a), value))
    }

    pub fn frob_sq(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).frobenius_norm_sq();
        let value = Matrix::from_fn(1, 1, |_, _| s);
        self.push(Op::FrobSq(a), value)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        let value = Matrix::from_fn(1, 1, |_, _| s);
        self.push(Op::Sum(a), value)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let count = (v.rows() * v.cols()).max(1) as f64;
        let s: f64 = v.data().iter().sum::<f64>() / count;
        let value = Matrix::from_fn(1, 1, |_, _| s);
        self.push(Op::Mean(a), value)
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let value = Matrix::from_fn(v.rows(), 1, |i, _| v.row(i).iter().sum());
        self.push(Op::RowSum(a), value)
    }

    pub fn col_sum(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let value = col_reduce(v, 1.0);
        self.push(Op::ColSum(a), value)
    }

    pub fn col_mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let value = col_reduce(v, 1.0 / v.rows().max(1) as f64);
        self.push(Op::ColMean(a), value)
    }

    fn elementwise1(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Matrix {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        Matrix::from_raw(v.rows(), v.cols(), data)
    }

    fn elementwise2(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Matrix::from_raw(va.rows(), va.cols(), data)
    }

    /// Recomputes every forward value in recording order. Leaves keep their
    /// stored values, so the root reproduces the recorded loss bit-for-bit.
    pub fn replay(&mut self) {
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op.clone();
            let value = match op {
                Op::Param | Op::Const => continue,
                Op::MatMul(a, b) => self.value(a).matmul(self.value(b)).expect("recorded"),
                Op::Transpose(a) => self.value(a).transpose(),
                Op::Add(a, b) => self.value(a).add(self.value(b)).expect("recorded"),
                Op::Sub(a, b) => self.value(a).sub(self.value(b)).expect("recorded"),
                Op::Mul(a, b) => self.elementwise2(a, b, |x, y| x * y),
                Op::Div(a, b) => self.elementwise2(a, b, |x, y| x / y),
                Op::Scale(a, c) => self.value(a).scale(c),
                Op::AddScalar(a, c) => self.elementwise1(a, |x| x + c),
                Op::Tanh(a) => self.elementwise1(a, f64::tanh),
                Op::Relu(a) => self.elementwise1(a, |x| x.max(0.0)),
                Op::Exp(a) => self.elementwise1(a, f64::exp),
                Op::Ln(a) => self.elementwise1(a, f64::ln),
                Op::Sqrt(a) => self.elementwise1(a, f64::sqrt),
                Op::Reshape(a, r, c) => reshape_matrix(self.value(a), r, c),
                Op::TakeDiag(a) => {
                    let v = self.value(a);
                    Matrix::from_fn(v.rows(), 1, |i, _| v.get(i, i))
                }
                Op::FrobSq(a) => {
                    let s = self.value(a).frobenius_norm_sq();
                    Matrix::from_fn(1, 1, |_, _| s)
                }
                Op::Sum(a) => {
                    let s: f64 = self.value(a).data().iter().sum();
                    Matrix::from_fn(1, 1, |_, _| s)
                }
                Op::Mean(a) => {
                    let v = self.value(a);
                    let count = (v.rows() * v.cols()).max(1) as f64;
                    let s: f64 = v.data().iter().sum::<f64>() / count;
                    Matrix::from_fn(1, 1, |_, _| s)
                }
                Op::RowSum(a) => {
                    let v = self.value(a);
                    Matrix::from_fn(v.rows(), 1, |i, _| v.row(i).iter().sum())
                }
                Op::ColSum(a) => col_reduce(self.value(a), 1.0),
                Op::ColMean(a) => {
                    let v = self.value(a);
                    col_reduce(v, 1.0 / v.rows().max(1) as f64)
                }
            };
            self.nodes[i].value = value;
        }
    }

    /// Backward pass from a scalar root, visiting nodes in strict reverse
    /// recording order (which is a reverse topological order).
    pub fn backward(&self, root: NodeId) -> Result<TapeGradients, TensorError> {
        let root_value = self.value(root);
        if root_value.shape() != (1, 1) {
            return Err(TensorError::NotScalar {
                rows: root_value.rows(),
                cols: root_value.cols(),
            });
        }
        let mut adjoints: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adjoints[root.0] = Some(Matrix::from_fn(1, 1, |_, _| 1.0));

        for i in (0..=root.0).rev() {
            let Some(grad) = adjoints[i].take() else {
                continue;
            };
            match self.nodes[i].op {
                Op::Param | Op::Const => {
                    adjoints[i] = Some(grad);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = grad.matmul(&self.value(b).transpose()).expect("recorded");
                    let db = self.value(a).transpose().matmul(&grad).expect("recorded");
                    accumulate(&mut adjoints, a, da);
                    accumulate(&mut adjoints, b, db);
                }
                Op::Transpose(a) => accumulate(&mut adjoints, a, grad.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut adjoints, a, grad.clone());
                    accumulate(&mut adjoints, b, grad);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoints, a, grad.clone());
                    accumulate(&mut adjoints, b, grad.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let da = zip_matrices(&grad, self.value(b), |g, y| g * y);
                    let db = zip_matrices(&grad, self.value(a), |g, x| g * x);
                    accumulate(&mut adjoints, a, da);
                    accumulate(&mut adjoints, b, db);
                }
                Op::Div(a, b) => {
                    let y = &self.nodes[i].value;
                    let da = zip_matrices(&grad, self.value(b), |g, d| g / d);
                    let gy = zip_matrices(&grad, y, |g, q| g * q);
                    let db = zip_matrices(&gy, self.value(b), |g, d| -g / d);
                    accumulate(&mut adjoints, a, da);
                    accumulate(&mut adjoints, b, db);
                }
                Op::Scale(a, c) => accumulate(&mut adjoints, a, grad.scale(c)),
                Op::AddScalar(a, _) => accumulate(&mut adjoints, a, grad),
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let da = zip_matrices(&grad, y, |g, t| g * (1.0 - t * t));
                    accumulate(&mut adjoints, a, da);
                }
                Op::Relu(a) => {
                    let y = &self.nodes[i].value;
                    let da = zip_matrices(&grad, y, |g, t| if t > 0.0 { g } else { 0.0 });
                    accumulate(&mut adjoints, a, da);
                }
                Op::Exp(a) => {
                    let y = &self.nodes[i].value;
                    let da = zip_matrices(&grad, y, |g, e| g * e);
                    accumulate(&mut adjoints, a, da);
                }
                Op::Ln(a) => {
                    let da = zip_matrices(&grad, self.value(a), |g, x| g / x);
                    accumulate(&mut adjoints, a, da);
                }
                Op::Sqrt(a) => {
                    // Subgradient 0 at the boundary keeps hinge-style losses
                    // from poisoning gradients with infinities.
                    let y = &self.nodes[i].value;
                    let da = zip_matrices(&grad, y, |g, s| if s > 0.0 { g / (2.0 * s) } else { 0.0 });
                    accumulate(&mut adjoints, a, da);
                }
                Op::Reshape(a, _, _) => {
                    let (r, c) = self.shape(a);
                    accumulate(&mut adjoints, a, reshape_matrix(&grad, r, c));
                }
                Op::TakeDiag(a) => {
                    let n = self.shape(a).0;
                    let da = Matrix::from_fn(n, n, |r, c| if r == c { grad.get(r, 0) } else { 0.0 });
                    accumulate(&mut adjoints, a, da);
                }
                Op::FrobSq(a) => {
                    let g = grad.get(0, 0);
                    accumulate(&mut adjoints, a, self.value(a).scale(2.0 * g));
                }
                Op::Sum(a) => {
                    let g = grad.get(0, 0);
                    let (r, c) = self.shape(a);
                    accumulate(&mut adjoints, a, Matrix::from_fn(r, c, |_, _| g));
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape(a);
                    let g = grad.get(0, 0) / ((r * c).max(1) as f64);
                    accumulate(&mut adjoints, a, Matrix::from_fn(r, c, |_, _| g));
                }
                Op::RowSum(a) => {
                    let (r, c) = self.shape(a);
                    let da = Matrix::from_fn(r, c, |row, _| grad.get(row, 0));
                    accumulate(&mut adjoints, a, da);
                }
                Op::ColSum(a) => {
                    let (r, c) = self.shape(a);
                    let da = Matrix::from_fn(r, c, |_, col| grad.get(0, col));
                    accumulate(&mut adjoints, a, da);
                }
                Op::ColMean(a) => {
                    let (r, c) = self.shape(a);
                    let scale = 1.0 / r.max(1) as f64;
                    let da = Matrix::from_fn(r, c, |_, col| grad.get(0, col) * scale);
                    accumulate(&mut adjoints, a, da);
                }
            }
        }
        Ok(TapeGradients { adjoints })
    }

    /// Gradients of a scalar root w.r.t. the given parameter nodes.
    /// Parameters that do not influence the root get zero gradients.
    pub fn gradients(
        &self,
        root: NodeId,
        params: &[NodeId],
    ) -> Result<Vec<Matrix>, TensorError> {
        let grads = self.backward(root)?;
        Ok(params
            .iter()
            .map(|&p| match grads.wrt(p) {
                Some(g) => g.clone(),
                None => {
                    let (r, c) = self.shape(p);
                    Matrix::zeros(r, c)
                }
            })
            .collect())
    }
}

fn accumulate(adjoints: &mut [Option<Matrix>], id: NodeId, delta: Matrix) {
    match &mut adjoints[id.0] {
        Some(existing) => existing.add_in_place(&delta).expect("adjoint shapes agree"),
        slot @ None => *slot = Some(delta),
    }
}

fn zip_matrices(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_raw(a.rows(), a.cols(), data)
}

fn reshape_matrix(v: &Matrix, rows: usize, cols: usize) -> Matrix {
    Matrix::from_raw(rows, cols, v.data().to_vec())
}

/// Column sums scaled by `scale`, as a 1 x m row.
fn col_reduce(v: &Matrix, scale: f64) -> Matrix {
    let mut sums = vec![0.0; v.cols()];
    for i in 0..v.rows() {
        for (s, &x) in sums.iter_mut().zip(v.row(i)) {
            *s += x;
        }
    }
    Matrix::from_raw(1, v.cols(), sums.into_iter().map(|s| s * scale).collect())
}

impl Matrix {
    /// Internal constructor for data already known to be the right length.
    /// Does not re-check finiteness: tape intermediates may legitimately
    /// overflow, and divergence detection happens at the loss level.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        debug_assert_eq!(data.len(), rows * cols);
        let mut m = Matrix::zeros(rows, cols);
        m.data_mut().copy_from_slice(&data);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_matrix;

    /// Central finite difference of `f` w.r.t. entry (i, j) of its argument.
    fn central_diff(f: &dyn Fn(&Matrix) -> f64, at: &Matrix, i: usize, j: usize) -> f64 {
        let h = 1e-5;
        let mut plus = at.clone();
        plus.set(i, j, at.get(i, j) + h);
        let mut minus = at.clone();
        minus.set(i, j, at.get(i, j) - h);
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    fn assert_grad_matches_fd(f: &dyn Fn(&Matrix) -> f64, at: &Matrix, grad: &Matrix, tol: f64) {
        for i in 0..at.rows() {
            for j in 0..at.cols() {
                let fd = central_diff(f, at, i, j);
                let an = grad.get(i, j);
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom <= tol,
                    "entry ({i},{j}): analytic {an}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn frobenius_square_gradient_is_2w() {
        let w = Matrix::identity(2);
        let mut tape = Tape::new();
        let wn = tape.param(w.clone());
        let loss = tape.frob_sq(wn);
        let grads = tape.gradients(loss, &[wn]).unwrap();
        assert_eq!(grads[0], w.scale(2.0));
    }

    #[test]
    fn sum_of_xw_gradient_matches_fd() {
        let x = normal_matrix(4, 3, 31);
        let w0 = normal_matrix(3, 2, 32);
        let f = {
            let x = x.clone();
            move |w: &Matrix| {
                x.matmul(w).unwrap().data().iter().sum::<f64>()
            }
        };
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let wn = tape.param(w0.clone());
        let prod = tape.matmul(xn, wn).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.gradients(loss, &[wn]).unwrap();
        assert_grad_matches_fd(&f, &w0, &grads[0], 1e-6);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let w = tape.param(normal_matrix(3, 3, 5));
        let c = tape.constant(Matrix::from_fn(1, 1, |_, _| 7.0));
        let loss = tape.scale(c, 2.0);
        let grads = tape.gradients(loss, &[w]).unwrap();
        assert_eq!(grads[0], Matrix::zeros(3, 3));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(normal_matrix(2, 2, 1));
        assert!(matches!(
            tape.backward(w),
            Err(TensorError::NotScalar { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn replay_reproduces_loss_bit_identically() {
        let mut tape = Tape::new();
        let w = tape.param(normal_matrix(4, 3, 77));
        let x = tape.constant(normal_matrix(5, 4, 78));
        let p = tape.matmul(x, w).unwrap();
        let t = tape.tanh(p);
        let loss = tape.frob_sq(t);
        let before = tape.scalar(loss).unwrap();
        tape.replay();
        let after = tape.scalar(loss).unwrap();
        assert_eq!(before.to_bits(), after.to_bits());
    }

    /// Finite-difference validation of each differentiable primitive, driven
    /// through a smooth scalarization so the checked op sits mid-graph.
    #[test]
    fn every_primitive_matches_finite_differences() {
        type Builder = fn(&mut Tape, NodeId) -> NodeId;
        let cases: Vec<(&str, (usize, usize), Builder)> = vec![
            ("matmul", (4, 3), |t, w| {
                let c = t.constant(normal_matrix(3, 5, 900));
                let m = t.matmul(w, c).unwrap();
                t.frob_sq(m)
            }),
            ("transpose", (3, 4), |t, w| {
                let tr = t.transpose(w);
                let c = t.constant(normal_matrix(3, 2, 901));
                let m = t.matmul(tr, c).unwrap();
                t.frob_sq(m)
            }),
            ("add", (3, 3), |t, w| {
                let c = t.constant(normal_matrix(3, 3, 902));
                let s = t.add(w, c).unwrap();
                t.frob_sq(s)
            }),
            ("sub", (3, 3), |t, w| {
                let c = t.constant(normal_matrix(3, 3, 903));
                let s = t.sub(w, c).unwrap();
                t.frob_sq(s)
            }),
            ("mul", (3, 3), |t, w| {
                let c = t.constant(normal_matrix(3, 3, 904));
                let s = t.mul(w, c).unwrap();
                t.frob_sq(s)
            }),
            ("div_num", (3, 3), |t, w| {
                let c = t.constant(normal_matrix(3, 3, 905).scale(0.1).add(&Matrix::from_fn(3, 3, |_, _| 2.0)).unwrap());
                let s = t.div(w, c).unwrap();
                t.frob_sq(s)
            }),
            ("div_den", (3, 3), |t, w| {
                // Shift the denominator away from zero.
                let shifted = t.add_scalar(w, 5.0);
                let c = t.constant(normal_matrix(3, 3, 906));
                let s = t.div(c, shifted).unwrap();
                t.frob_sq(s)
            }),
            ("scale", (3, 3), |t, w| {
                let s = t.scale(w, -1.7);
                t.frob_sq(s)
            }),
            ("add_scalar", (3, 3), |t, w| {
                let s = t.add_scalar(w, 0.3);
                t.frob_sq(s)
            }),
            ("tanh", (3, 3), |t, w| {
                let s = t.tanh(w);
                t.frob_sq(s)
            }),
            ("exp", (3, 3), |t, w| {
                let s = t.exp(w);
                t.frob_sq(s)
            }),
            ("ln", (3, 3), |t, w| {
                let shifted = t.add_scalar(w, 6.0);
                let s = t.ln(shifted);
                t.frob_sq(s)
            }),
            ("sqrt", (3, 3), |t, w| {
                let shifted = t.add_scalar(w, 6.0);
                let s = t.sqrt(shifted);
                t.frob_sq(s)
            }),
            ("reshape", (3, 4), |t, w| {
                let r = t.reshape(w, 2, 6).unwrap();
                let c = t.constant(normal_matrix(6, 2, 907));
                let m = t.matmul(r, c).unwrap();
                t.frob_sq(m)
            }),
            ("take_diag", (4, 4), |t, w| {
                let d = t.take_diag(w).unwrap();
                t.frob_sq(d)
            }),
            ("frob_sq", (3, 3), |t, w| {
                let f = t.frob_sq(w);
                let s = t.sqrt(f);
                t.frob_sq(s)
            }),
            ("sum", (3, 3), |t, w| {
                let e = t.tanh(w);
                t.sum(e)
            }),
            ("mean", (3, 3), |t, w| {
                let e = t.tanh(w);
                t.mean(e)
            }),
            ("row_sum", (3, 4), |t, w| {
                let r = t.row_sum(w);
                t.frob_sq(r)
            }),
            ("col_sum", (3, 4), |t, w| {
                let r = t.col_sum(w);
                t.frob_sq(r)
            }),
            ("col_mean", (3, 4), |t, w| {
                let r = t.col_mean(w);
                t.frob_sq(r)
            }),
        ];

        for (idx, (name, (r, c), build)) in cases.iter().enumerate() {
            let w0 = normal_matrix(*r, *c, 1000 + idx as u64);
            let mut tape = Tape::new();
            let wn = tape.param(w0.clone());
            let loss = build(&mut tape, wn);
            assert_eq!(tape.value(loss).shape(), (1, 1), "{name} root not scalar");
            let grads = tape.gradients(loss, &[wn]).unwrap();
            let f = move |w: &Matrix| {
                let mut t = Tape::new();
                let wn = t.param(w.clone());
                let l = build(&mut t, wn);
                t.scalar(l).unwrap()
            };
            assert_grad_matches_fd(&f, &w0, &grads[0], 1e-5);
        }
    }

    #[test]
    fn relu_gradient_masks_negative_side() {
        let w0 = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.5, -0.1]]).unwrap();
        let mut tape = Tape::new();
        let wn = tape.param(w0.clone());
        let r = tape.relu(wn);
        let loss = tape.sum(r);
        let grads = tape.gradients(loss, &[wn]).unwrap();
        assert_eq!(
            grads[0],
            Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap()
        );
    }

    #[test]
    fn shared_subexpression_accumulates_adjoints() {
        // loss = |W|_F^2 + sum(W): dW = 2W + 1.
        let w0 = normal_matrix(2, 3, 55);
        let mut tape = Tape::new();
        let wn = tape.param(w0.clone());
        let a = tape.frob_sq(wn);
        let b = tape.sum(wn);
        let loss = tape.add(a, b).unwrap();
        let grads = tape.gradients(loss, &[wn]).unwrap();
        let expected = Matrix::from_fn(2, 3, |i, j| 2.0 * w0.get(i, j) + 1.0);
        let dev = grads[0].sub(&expected).unwrap().max_abs();
        assert!(dev < 1e-12);
    }
}
