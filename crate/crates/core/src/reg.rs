//! Orthogonality regularizers and whitening losses.
//!
//! SO penalizes the squared Frobenius distance between a weight matrix's
//! Gram matrix and the identity; SRIP penalizes the spectral norm of the same
//! residual, estimated by the two-step power iteration. Both branch on the
//! weight shape: the Gram matrix is `W^T W` when the input side is larger
//! than the output side, `W W^T` otherwise, so the residual always lives on
//! the smaller side.
//!
//! The encoder-wide sum runs over OR-eligible layers only (linear and conv
//! weights; biases and norms are excluded), and the training objective is the
//! affine combination `loss_ssl + gamma * loss_or`.

use crate::eig::{power_iter_specnorm_with_v0, POWER_DEGENERATE_TOL};
use crate::matrix::{Matrix, TensorError};
use crate::rng::{mix_seed, normal_matrix};
use crate::tape::Tape;

/// What a named weight tensor is, which decides OR eligibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Conv,
    Bias,
    Norm,
}

impl LayerKind {
    /// Only linear and convolutional weights receive orthogonality pressure.
    pub fn is_or_eligible(self) -> bool {
        matches!(self, LayerKind::Linear | LayerKind::Conv)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Linear => "linear",
            LayerKind::Conv => "conv",
            LayerKind::Bias => "bias",
            LayerKind::Norm => "norm",
        }
    }
}

/// A named weight tensor in its 2-D form.
///
/// Linear weights are stored as `input x output`. Conv filters are stored
/// already reshaped to `(S * H * C_in) x C_out` (see `io::conv_reshape`),
/// with the original four axis sizes kept in `raw_shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub raw_shape: Vec<usize>,
    pub weight: Matrix,
}

impl LayerSpec {
    pub fn linear(name: impl Into<String>, weight: Matrix) -> Result<LayerSpec, TensorError> {
        if weight.is_empty() {
            return Err(TensorError::Empty { what: "linear weight" });
        }
        Ok(LayerSpec {
            name: name.into(),
            kind: LayerKind::Linear,
            raw_shape: vec![weight.rows(), weight.cols()],
            weight,
        })
    }

    /// Conv layer from an already-reshaped weight matrix; validates that the
    /// matrix dimensions match the four axis sizes.
    pub fn conv(
        name: impl Into<String>,
        c_out: usize,
        c_in: usize,
        h: usize,
        s: usize,
        weight: Matrix,
    ) -> Result<LayerSpec, TensorError> {
        if weight.is_empty() {
            return Err(TensorError::Empty { what: "conv weight" });
        }
        if weight.rows() != s * h * c_in || weight.cols() != c_out {
            return Err(TensorError::ShapeMismatch {
                op: "conv layer",
                left: weight.shape(),
                right: (s * h * c_in, c_out),
            });
        }
        Ok(LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv,
            raw_shape: vec![c_out, c_in, h, s],
            weight,
        })
    }

    pub fn bias(name: impl Into<String>, values: Matrix) -> LayerSpec {
        let raw_shape = vec![values.rows(), values.cols()];
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Bias,
            raw_shape,
            weight: values,
        }
    }

    pub fn norm(name: impl Into<String>, values: Matrix) -> LayerSpec {
        let raw_shape = vec![values.rows(), values.cols()];
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Norm,
            raw_shape,
            weight: values,
        }
    }
}

/// Which regularizer a training run applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    None,
    So,
    Srip,
    VicregWhiten,
}

impl RegKind {
    pub fn is_or(self) -> bool {
        matches!(self, RegKind::So | RegKind::Srip)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::So => "so",
            RegKind::Srip => "srip",
            RegKind::VicregWhiten => "vicreg-whiten",
        }
    }

    pub fn parse(s: &str) -> Option<RegKind> {
        match s {
            "none" => Some(RegKind::None),
            "so" => Some(RegKind::So),
            "srip" => Some(RegKind::Srip),
            "vicreg-whiten" => Some(RegKind::VicregWhiten),
            _ => None,
        }
    }
}

/// Divisor convention for covariance computations in the whitening losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovDivisor {
    NMinusOne,
    N,
}

impl CovDivisor {
    pub fn divisor(self, n: usize) -> f64 {
        match self {
            CovDivisor::NMinusOne => (n as f64 - 1.0).max(1.0),
            CovDivisor::N => n as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CovDivisor::NMinusOne => "n-1",
            CovDivisor::N => "n",
        }
    }

    pub fn parse(s: &str) -> Option<CovDivisor> {
        match s {
            "n-1" => Some(CovDivisor::NMinusOne),
            "n" => Some(CovDivisor::N),
            _ => None,
        }
    }
}

/// Where the whitening terms attach in a BYOL-style run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhitenTarget {
    Predictor,
    Projector,
}

impl WhitenTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            WhitenTarget::Predictor => "predictor",
            WhitenTarget::Projector => "projector",
        }
    }

    pub fn parse(s: &str) -> Option<WhitenTarget> {
        match s {
            "predictor" => Some(WhitenTarget::Predictor),
            "projector" => Some(WhitenTarget::Projector),
            _ => None,
        }
    }
}

/// Regularizer selection plus its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerConfig {
    pub kind: RegKind,
    /// Weight of the OR term in the combined objective.
    pub gamma: f64,
    /// Base of the per-step, per-layer SRIP start-vector seed stream.
    pub srip_seed: u64,
    /// Weight of the variance term; the covariance term uses
    /// `vicreg_gamma * 0.004`.
    pub vicreg_gamma: f64,
    /// Minimum desired per-dimension standard deviation.
    pub vicreg_threshold: f64,
    /// Stabilizer inside the regularized standard deviation.
    pub vicreg_epsilon: f64,
    pub cov_divisor: CovDivisor,
    pub whiten_target: WhitenTarget,
}

impl RegularizerConfig {
    /// Config with the published per-kind default gamma (SO 1e-6, SRIP 1e-3).
    /// Desk-scale runs re-tune gamma upward; see the training defaults.
    pub fn new(kind: RegKind) -> RegularizerConfig {
        let gamma = match kind {
            RegKind::So => 1e-6,
            RegKind::Srip => 1e-3,
            RegKind::None | RegKind::VicregWhiten => 0.0,
        };
        RegularizerConfig {
            kind,
            gamma,
            srip_seed: 0,
            vicreg_gamma: 1.0,
            vicreg_threshold: 1.0,
            vicreg_epsilon: 1e-4,
            cov_divisor: CovDivisor::NMinusOne,
            whiten_target: WhitenTarget::Predictor,
        }
    }
}

/// Gram residual on the smaller side: `W^T W - I` when rows > cols,
/// `W W^T - I` otherwise.
pub fn gram_residual(w: &Matrix) -> Matrix {
    assert!(!w.is_empty(), "weight matrix must be non-empty");
    let gram = if w.rows() > w.cols() {
        w.transpose().matmul(w).expect("shapes agree")
    } else {
        w.matmul(&w.transpose()).expect("shapes agree")
    };
    let n = gram.rows();
    gram.sub(&Matrix::identity(n)).expect("square")
}

/// Soft orthogonality: squared Frobenius norm of the Gram residual.
pub fn so_loss(w: &Matrix) -> f64 {
    gram_residual(w).frobenius_norm_sq()
}

/// Closed-form gradient of [`so_loss`]: `4 W (W^T W - I)` for rows > cols,
/// `4 (W W^T - I) W` otherwise.
pub fn so_grad(w: &Matrix) -> Matrix {
    let residual = gram_residual(w);
    if w.rows() > w.cols() {
        w.matmul(&residual).expect("shapes agree").scale(4.0)
    } else {
        residual.matmul(w).expect("shapes agree").scale(4.0)
    }
}

/// SRIP: two-step power-iteration estimate of the spectral norm of the Gram
/// residual, with the start vector drawn from the seed.
pub fn srip_loss(w: &Matrix, seed: u64) -> f64 {
    let residual = gram_residual(w);
    let v0 = normal_matrix(residual.rows(), 1, seed);
    power_iter_specnorm_with_v0(&residual, &v0).expect("residual is square")
}

/// SRIP with an explicit start vector.
pub fn srip_loss_with_v0(w: &Matrix, v0: &Matrix) -> Result<f64, TensorError> {
    let residual = gram_residual(w);
    power_iter_specnorm_with_v0(&residual, v0)
}

/// SRIP value and gradient, differentiating through both multiplications of
/// the estimator with the start vector held fixed.
///
/// When `|residual * v0|` is degenerate (orthogonal weights) the loss is 0
/// and the gradient is the zero matrix, consistent with the estimator's
/// degenerate branch.
pub fn srip_value_and_grad(w: &Matrix, seed: u64) -> (f64, Matrix) {
    let mut tape = Tape::new();
    let wn = tape.param(w.clone());
    let side = w.rows().min(w.cols());
    let v0 = normal_matrix(side, 1, seed);

    let gram = if w.rows() > w.cols() {
        let wt = tape.transpose(wn);
        tape.matmul(wt, wn).expect("shapes agree")
    } else {
        let wt = tape.transpose(wn);
        tape.matmul(wn, wt).expect("shapes agree")
    };
    let identity = tape.constant(Matrix::identity(side));
    let residual = tape.sub(gram, identity).expect("square");
    let v0n = tape.constant(v0);
    let u = tape.matmul(residual, v0n).expect("column");
    let u_norm_sq = tape.frob_sq(u);
    let u_norm = tape.sqrt(u_norm_sq);
    if tape.scalar(u_norm).expect("scalar") < POWER_DEGENERATE_TOL {
        return (0.0, Matrix::zeros(w.rows(), w.cols()));
    }
    let v = tape.matmul(residual, u).expect("column");
    let v_norm_sq = tape.frob_sq(v);
    let v_norm = tape.sqrt(v_norm_sq);
    let loss = tape.div(v_norm, u_norm).expect("scalars");

    let value = tape.scalar(loss).expect("scalar");
    let grads = tape.gradients(loss, &[wn]).expect("scalar root");
    (value, grads.into_iter().next().expect("one param"))
}

/// Gradient half of [`srip_value_and_grad`].
pub fn srip_grad(w: &Matrix, seed: u64) -> Matrix {
    srip_value_and_grad(w, seed).1
}

/// Encoder-wide OR loss: sum over OR-eligible layers. SRIP consumes one
/// fresh seed per layer from the config's seed stream, in layer order.
pub fn or_loss(layers: &[LayerSpec], cfg: &RegularizerConfig) -> f64 {
    let refs: Vec<&LayerSpec> = layers.iter().collect();
    or_value_and_grads_ref(&refs, cfg, false).0
}

/// OR loss and (optionally) per-layer gradients. The gradient vector is
/// aligned with `layers`; ineligible layers get `None`.
pub fn or_value_and_grads(
    layers: &[LayerSpec],
    cfg: &RegularizerConfig,
    with_grads: bool,
) -> (f64, Vec<Option<Matrix>>) {
    let refs: Vec<&LayerSpec> = layers.iter().collect();
    or_value_and_grads_ref(&refs, cfg, with_grads)
}

/// Reference-slice variant of [`or_value_and_grads`], for callers that hold
/// the layers inside a network.
pub fn or_value_and_grads_ref(
    layers: &[&LayerSpec],
    cfg: &RegularizerConfig,
    with_grads: bool,
) -> (f64, Vec<Option<Matrix>>) {
    assert!(cfg.kind.is_or(), "or_loss requires kind so or srip");
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(layers.len());
    let mut any_eligible = false;
    for (index, layer) in layers.iter().enumerate() {
        if !layer.kind.is_or_eligible() {
            grads.push(None);
            continue;
        }
        any_eligible = true;
        match cfg.kind {
            RegKind::So => {
                total += so_loss(&layer.weight);
                grads.push(with_grads.then(|| so_grad(&layer.weight)));
            }
            RegKind::Srip => {
                let seed = mix_seed(cfg.srip_seed, &[index as u64]);
                if with_grads {
                    let (value, grad) = srip_value_and_grad(&layer.weight, seed);
                    total += value;
                    grads.push(Some(grad));
                } else {
                    total += srip_loss(&layer.weight, seed);
                    grads.push(None);
                }
            }
            RegKind::None | RegKind::VicregWhiten => unreachable!(),
        }
    }
    if !any_eligible {
        log::warn!("or_loss: no OR-eligible layers; returning 0");
    }
    (total, grads)
}

/// Combined training objective: `loss_ssl + gamma * loss_or`.
pub fn combined_loss(loss_ssl: f64, loss_or: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0, "gamma must be non-negative");
    loss_ssl + gamma * loss_or
}

/// Variance hinge: mean over feature columns of
/// `max(0, threshold - sqrt(var + epsilon))`, variance over sample rows.
pub fn vicreg_variance_loss(
    h: &Matrix,
    threshold: f64,
    epsilon: f64,
) -> Result<f64, TensorError> {
    vicreg_variance_loss_with(h, threshold, epsilon, CovDivisor::NMinusOne)
}

/// Variance hinge with an explicit divisor convention.
pub fn vicreg_variance_loss_with(
    h: &Matrix,
    threshold: f64,
    epsilon: f64,
    divisor: CovDivisor,
) -> Result<f64, TensorError> {
    if h.rows() < 2 {
        return Err(TensorError::InsufficientSamples {
            rows: h.rows(),
            needed: 2,
        });
    }
    let denom = divisor.divisor(h.rows());
    let means = h.column_means();
    let mut total = 0.0;
    for j in 0..h.cols() {
        let mut var = 0.0;
        for i in 0..h.rows() {
            let d = h.get(i, j) - means[j];
            var += d * d;
        }
        var /= denom;
        total += (threshold - (var + epsilon).sqrt()).max(0.0);
    }
    Ok(total / h.cols() as f64)
}

/// Sum of squared off-diagonal covariance entries over feature columns.
pub fn vicreg_covariance_loss(h: &Matrix) -> Result<f64, TensorError> {
    vicreg_covariance_loss_with(h, CovDivisor::NMinusOne)
}

/// Covariance penalty with an explicit divisor convention.
pub fn vicreg_covariance_loss_with(
    h: &Matrix,
    divisor: CovDivisor,
) -> Result<f64, TensorError> {
    if h.rows() < 2 {
        return Err(TensorError::InsufficientSamples {
            rows: h.rows(),
            needed: 2,
        });
    }
    let cov = h.centered_gram()?.scale(1.0 / divisor.divisor(h.rows()));
    let mut total = 0.0;
    for i in 0..cov.rows() {
        for j in 0..cov.cols() {
            if i != j {
                let c = cov.get(i, j);
                total += c * c;
            }
        }
    }
    Ok(total)
}
