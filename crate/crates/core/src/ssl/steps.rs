//! Per-step losses and gradients for the joint-embedding methods.
//!
//! Each step builds one tape over the online parameters. Target-network
//! values enter as constants computed outside the tape, so target isolation
//! is structural: no tape node can touch a target parameter.

use crate::matrix::{Matrix, TensorError};
use crate::reg::{CovDivisor, RegKind, RegularizerConfig, WhitenTarget};
use crate::ssl::data::augment;
use crate::ssl::net::{DualNetState, ForwardNodes, OnlineNet, OnlineNodes};
use crate::ssl::TrainConfig;
use crate::tape::{NodeId, Tape};

/// Additive guard inside row-norm square roots; keeps the sqrt gradient
/// finite on an exactly-zero row while shifting the norm by under 1e-12.
const NORM_GUARD: f64 = 1e-24;
/// Additive guard in cosine denominators.
const COSINE_EPS: f64 = 1e-12;

/// Scalar SSL loss plus gradients in canonical online parameter order.
pub struct StepOutput {
    pub loss_ssl: f64,
    pub grads: Vec<Matrix>,
}

/// Seeds for the two augmented views of one step.
#[derive(Debug, Clone, Copy)]
pub struct ViewSeeds {
    pub view1: u64,
    pub view2: u64,
}

/// Mean over rows of `2 - 2 cos(p_i, t_i)` where `t` is a constant target.
pub(crate) fn cosine_alignment_loss(
    tape: &mut Tape,
    p: NodeId,
    target: &Matrix,
) -> Result<NodeId, TensorError> {
    let t = tape.constant(target.clone());
    let pt = tape.mul(p, t)?;
    let num = tape.row_sum(pt);

    let pp = tape.mul(p, p)?;
    let sp = tape.row_sum(pp);
    let sp_safe = tape.add_scalar(sp, NORM_GUARD);
    let p_norm = tape.sqrt(sp_safe);

    let t_norms = Matrix::from_fn(target.rows(), 1, |i, _| {
        (target.row(i).iter().map(|v| v * v).sum::<f64>() + NORM_GUARD).sqrt()
    });
    let t_norm = tape.constant(t_norms);

    let norms = tape.mul(p_norm, t_norm)?;
    let den = tape.add_scalar(norms, COSINE_EPS);
    let cos = tape.div(num, den)?;
    let neg = tape.scale(cos, -2.0);
    let term = tape.add_scalar(neg, 2.0);
    Ok(tape.mean(term))
}

/// Row-normalizes a feature node: `h_i / (|h_i| + guard)` per row.
pub(crate) fn row_normalize(tape: &mut Tape, h: NodeId) -> Result<NodeId, TensorError> {
    let (_, m) = {
        let v = tape.value(h);
        (v.rows(), v.cols())
    };
    let hh = tape.mul(h, h)?;
    let rs = tape.row_sum(hh);
    let rs_safe = tape.add_scalar(rs, NORM_GUARD);
    let norms = tape.sqrt(rs_safe);
    let ones_row = tape.constant(Matrix::from_fn(1, m, |_, _| 1.0));
    let tiled = tape.matmul(norms, ones_row)?;
    tape.div(h, tiled)
}

/// Mean over rows of `logsumexp(row) - row[diag]`. Row maxima enter as
/// detached constants; the gradient of logsumexp is the softmax either way.
fn cross_entropy_diagonal(tape: &mut Tape, logits: NodeId) -> Result<NodeId, TensorError> {
    let n = tape.value(logits).rows();
    let maxes = Matrix::from_fn(n, 1, |i, _| {
        tape.value(logits)
            .row(i)
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    });
    let max_col = tape.constant(maxes);
    let ones_row = tape.constant(Matrix::from_fn(1, n, |_, _| 1.0));
    let max_tile = tape.matmul(max_col, ones_row)?;
    let shifted = tape.sub(logits, max_tile)?;
    let exps = tape.exp(shifted);
    let sums = tape.row_sum(exps);
    let ln_sums = tape.ln(sums);
    let lse = tape.add(ln_sums, max_col)?;
    let diag = tape.take_diag(logits)?;
    let delta = tape.sub(lse, diag)?;
    Ok(tape.mean(delta))
}

/// Symmetric InfoNCE over in-batch negatives: cross-entropy of the cosine
/// similarity logits with positives on the diagonal, averaged over both
/// directions.
pub(crate) fn infonce_loss_on_tape(
    tape: &mut Tape,
    h1: NodeId,
    h2: NodeId,
    temperature: f64,
) -> Result<NodeId, TensorError> {
    let h1n = row_normalize(tape, h1)?;
    let h2n = row_normalize(tape, h2)?;
    let h2t = tape.transpose(h2n);
    let sims = tape.matmul(h1n, h2t)?;
    let logits = tape.scale(sims, 1.0 / temperature);
    let forward = cross_entropy_diagonal(tape, logits)?;
    let logits_t = tape.transpose(logits);
    let backward = cross_entropy_diagonal(tape, logits_t)?;
    let sum = tape.add(forward, backward)?;
    Ok(tape.scale(sum, 0.5))
}

/// Variance hinge on the tape: mean over columns of
/// `max(0, threshold - sqrt(var + epsilon))`.
pub(crate) fn vicreg_variance_on_tape(
    tape: &mut Tape,
    h: NodeId,
    threshold: f64,
    epsilon: f64,
    divisor: CovDivisor,
) -> Result<NodeId, TensorError> {
    let n = tape.value(h).rows();
    let centered = center_columns(tape, h)?;
    let sq = tape.mul(centered, centered)?;
    let col_sq = tape.col_sum(sq);
    let var = tape.scale(col_sq, 1.0 / divisor.divisor(n));
    let var_eps = tape.add_scalar(var, epsilon);
    let std = tape.sqrt(var_eps);
    let neg = tape.scale(std, -1.0);
    let margin = tape.add_scalar(neg, threshold);
    let hinge = tape.relu(margin);
    Ok(tape.mean(hinge))
}

/// Covariance penalty on the tape: sum of squared off-diagonal entries.
pub(crate) fn vicreg_covariance_on_tape(
    tape: &mut Tape,
    h: NodeId,
    divisor: CovDivisor,
) -> Result<NodeId, TensorError> {
    let n = tape.value(h).rows();
    let centered = center_columns(tape, h)?;
    let ct = tape.transpose(centered);
    let gram = tape.matmul(ct, centered)?;
    let cov = tape.scale(gram, 1.0 / divisor.divisor(n));
    let cov_sq = tape.mul(cov, cov)?;
    let total = tape.sum(cov_sq);
    let diag = tape.take_diag(cov)?;
    let diag_sq = tape.mul(diag, diag)?;
    let diag_total = tape.sum(diag_sq);
    tape.sub(total, diag_total)
}

fn center_columns(tape: &mut Tape, h: NodeId) -> Result<NodeId, TensorError> {
    let n = tape.value(h).rows();
    let means = tape.col_mean(h);
    let ones_col = tape.constant(Matrix::from_fn(n, 1, |_, _| 1.0));
    let mean_tile = tape.matmul(ones_col, means)?;
    tape.sub(h, mean_tile)
}

/// Adds the whitening terms to a base loss node, averaging each term over
/// the given feature nodes (one per view).
fn add_whitening_terms(
    tape: &mut Tape,
    base: NodeId,
    features: &[NodeId],
    reg: &RegularizerConfig,
) -> Result<NodeId, TensorError> {
    let count = features.len() as f64;
    let mut var_sum: Option<NodeId> = None;
    let mut cov_sum: Option<NodeId> = None;
    for &h in features {
        let v = vicreg_variance_on_tape(
            tape,
            h,
            reg.vicreg_threshold,
            reg.vicreg_epsilon,
            reg.cov_divisor,
        )?;
        let c = vicreg_covariance_on_tape(tape, h, reg.cov_divisor)?;
        var_sum = Some(match var_sum {
            Some(acc) => tape.add(acc, v)?,
            None => v,
        });
        cov_sum = Some(match cov_sum {
            Some(acc) => tape.add(acc, c)?,
            None => c,
        });
    }
    let var_avg = tape.scale(var_sum.expect("at least one view"), 1.0 / count);
    let cov_avg = tape.scale(cov_sum.expect("at least one view"), 1.0 / count);
    let var_term = tape.scale(var_avg, reg.vicreg_gamma);
    let cov_term = tape.scale(cov_avg, reg.vicreg_gamma * 0.004);
    let with_var = tape.add(base, var_term)?;
    tape.add(with_var, cov_term)
}

/// One BYOL step: two augmented views, online predictions regressed onto
/// constant target projections via the symmetrized cosine loss. Returns the
/// SSL loss (plus whitening terms when configured) and gradients for the
/// online parameters only.
pub fn byol_step(
    state: &DualNetState,
    batch: &Matrix,
    cfg: &TrainConfig,
    seeds: ViewSeeds,
) -> Result<StepOutput, TensorError> {
    let view1 = augment(batch, &cfg.augment, seeds.view1);
    let view2 = augment(batch, &cfg.augment, seeds.view2);
    let target1 = state.target.project(&view1);
    let target2 = state.target.project(&view2);

    let mut tape = Tape::new();
    let nodes = OnlineNodes::register(&mut tape, &state.online);
    let f1 = nodes.forward(&mut tape, &state.online, &view1)?;
    let f2 = nodes.forward(&mut tape, &state.online, &view2)?;

    let l12 = cosine_alignment_loss(&mut tape, f1.pred, &target2)?;
    let l21 = cosine_alignment_loss(&mut tape, f2.pred, &target1)?;
    let sum = tape.add(l12, l21)?;
    let mut loss = tape.scale(sum, 0.5);

    if cfg.regularizer.kind == RegKind::VicregWhiten {
        let features = whiten_features(&f1, &f2, cfg.regularizer.whiten_target);
        loss = add_whitening_terms(&mut tape, loss, &features, &cfg.regularizer)?;
    }

    let loss_ssl = tape.scalar(loss)?;
    let grads = tape.gradients(loss, &nodes.flat)?;
    Ok(StepOutput { loss_ssl, grads })
}

fn whiten_features(f1: &ForwardNodes, f2: &ForwardNodes, target: WhitenTarget) -> Vec<NodeId> {
    match target {
        WhitenTarget::Predictor => vec![f1.pred, f2.pred],
        WhitenTarget::Projector => vec![f1.proj, f2.proj],
    }
}

/// One InfoNCE step over the online encoder + projector (no predictor, no
/// target network). Needs at least two samples for in-batch negatives.
pub fn infonce_step(
    online: &OnlineNet,
    batch: &Matrix,
    cfg: &TrainConfig,
    seeds: ViewSeeds,
) -> Result<StepOutput, TensorError> {
    if batch.rows() < 2 {
        return Err(TensorError::InsufficientSamples {
            rows: batch.rows(),
            needed: 2,
        });
    }
    let view1 = augment(batch, &cfg.augment, seeds.view1);
    let view2 = augment(batch, &cfg.augment, seeds.view2);

    let mut tape = Tape::new();
    let nodes = OnlineNodes::register(&mut tape, online);
    let f1 = nodes.forward(&mut tape, online, &view1)?;
    let f2 = nodes.forward(&mut tape, online, &view2)?;

    let mut loss = infonce_loss_on_tape(&mut tape, f1.proj, f2.proj, cfg.temperature)?;
    if cfg.regularizer.kind == RegKind::VicregWhiten {
        // No predictor in this path; whitening attaches to the projections.
        loss = add_whitening_terms(&mut tape, loss, &[f1.proj, f2.proj], &cfg.regularizer)?;
    }

    let loss_ssl = tape.scalar(loss)?;
    let grads = tape.gradients(loss, &nodes.flat)?;
    Ok(StepOutput { loss_ssl, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reg::{vicreg_covariance_loss_with, vicreg_variance_loss_with};
    use crate::rng::normal_matrix;
    use crate::ssl::net::{Activation, EncoderNet, Mlp};
    use crate::ssl::{DimsConfig, Method, TrainConfig};

    fn tiny_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.data.dim = 6;
        cfg.data.n_samples = 16;
        cfg.dims = DimsConfig {
            hidden: 5,
            repr: 4,
            proj: Some(3),
            conv: None,
        };
        cfg.batch_size = 8;
        cfg.augment.noise_std = 0.1;
        cfg.augment.mask_prob = 0.1;
        cfg.method = Method::Byol;
        cfg
    }

    fn tiny_state(cfg: &TrainConfig) -> DualNetState {
        DualNetState::new(
            OnlineNet {
                encoder: EncoderNet::new(
                    cfg.data.dim,
                    cfg.dims.hidden,
                    cfg.dims.repr,
                    cfg.dims.conv,
                    Activation::Tanh,
                    31,
                ),
                projector: Some(Mlp::new("projector", 4, 3, 3, Activation::Tanh, 32)),
                predictor: Mlp::new("predictor", 3, 3, 3, Activation::Tanh, 33),
            },
            cfg.ema_tau,
        )
    }

    #[test]
    fn cosine_loss_zero_when_aligned_and_four_when_opposed() {
        // p equals the unit-norm target: cosine 1, loss ~ 0.
        let target = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(target.clone());
        let loss = cosine_alignment_loss(&mut tape, p, &target).unwrap();
        assert!(tape.scalar(loss).unwrap().abs() < 1e-9);

        // Anti-aligned unit vectors: per-pair term 4, mean stays 4.
        let mut tape = Tape::new();
        let p = tape.param(target.scale(-1.0));
        let loss = cosine_alignment_loss(&mut tape, p, &target).unwrap();
        assert!((tape.scalar(loss).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn byol_step_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let state = tiny_state(&cfg);
        let batch = normal_matrix(8, 6, 77);
        let seeds = ViewSeeds { view1: 5, view2: 6 };
        let out = byol_step(&state, &batch, &cfg, seeds).unwrap();
        assert_eq!(out.grads.len(), state.online.param_count());

        let loss_at = |state: &DualNetState| {
            byol_step(state, &batch, &cfg, seeds).unwrap().loss_ssl
        };
        check_fd_against(&state, &out.grads, loss_at, 1e-4);
    }

    #[test]
    fn byol_step_with_whitening_gradients_match_fd() {
        let mut cfg = tiny_cfg();
        cfg.regularizer.kind = RegKind::VicregWhiten;
        cfg.regularizer.vicreg_gamma = 0.7;
        let state = tiny_state(&cfg);
        let batch = normal_matrix(8, 6, 78);
        let seeds = ViewSeeds { view1: 7, view2: 8 };
        let out = byol_step(&state, &batch, &cfg, seeds).unwrap();
        let loss_at = |state: &DualNetState| {
            byol_step(state, &batch, &cfg, seeds).unwrap().loss_ssl
        };
        check_fd_against(&state, &out.grads, loss_at, 1e-4);
    }

    #[test]
    fn infonce_step_gradients_match_finite_differences() {
        let mut cfg = tiny_cfg();
        cfg.method = Method::Infonce;
        let state = tiny_state(&cfg);
        let batch = normal_matrix(8, 6, 79);
        let seeds = ViewSeeds { view1: 9, view2: 10 };
        let out = infonce_step(&state.online, &batch, &cfg, seeds).unwrap();
        let loss_at = |state: &DualNetState| {
            infonce_step(&state.online, &batch, &cfg, seeds)
                .unwrap()
                .loss_ssl
        };
        check_fd_against(&state, &out.grads, loss_at, 1e-4);
    }

    /// Pokes a sample of parameter entries and compares central differences
    /// against the reported gradients.
    fn check_fd_against(
        state: &DualNetState,
        grads: &[Matrix],
        loss_at: impl Fn(&DualNetState) -> f64,
        tol: f64,
    ) {
        let h = 1e-5;
        let mut param_idx = 0;
        let mut shapes = Vec::new();
        state.online.visit_params(&mut |p| {
            shapes.push(p.shape());
            param_idx += 1;
        });
        for (pi, &(rows, cols)) in shapes.iter().enumerate() {
            // Sample a few entries per parameter.
            for &(i, j) in &[(0, 0), (rows - 1, cols - 1), (rows / 2, cols / 2)] {
                let poke = |delta: f64| {
                    let mut probe_state = state.clone();
                    let mut k = 0;
                    probe_state.online.visit_params_mut(&mut |p| {
                        if k == pi {
                            let old = p.get(i, j);
                            p.set(i, j, old + delta);
                        }
                        k += 1;
                    });
                    loss_at(&probe_state)
                };
                let fd = (poke(h) - poke(-h)) / (2.0 * h);
                let an = grads[pi].get(i, j);
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom <= tol,
                    "param {pi} entry ({i},{j}): analytic {an}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn infonce_identical_embeddings_give_ln_n() {
        // Zero weights and biases: every sample maps to the same embedding,
        // the logits are uniform, and the loss is exactly ln(batch).
        let cfg = {
            let mut c = tiny_cfg();
            c.method = Method::Infonce;
            c.augment.noise_std = 0.0;
            c.augment.mask_prob = 0.0;
            c
        };
        let mut state = tiny_state(&cfg);
        state.online.visit_params_mut(&mut |p| {
            for v in p.data_mut() {
                *v = 0.0;
            }
        });
        let batch = normal_matrix(8, 6, 3);
        let out = infonce_step(
            &state.online,
            &batch,
            &cfg,
            ViewSeeds { view1: 1, view2: 2 },
        )
        .unwrap();
        assert!((out.loss_ssl - (8.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn infonce_aligned_positives_orthogonal_negatives_low_temperature() {
        // Identity embeddings on both sides: positives cosine 1, negatives 0.
        // As temperature shrinks the loss approaches 0.
        let mut tape = Tape::new();
        let h = Matrix::identity(4);
        let h1 = tape.param(h.clone());
        let h2 = tape.constant(h);
        let loss = infonce_loss_on_tape(&mut tape, h1, h2, 0.05).unwrap();
        let value = tape.scalar(loss).unwrap();
        assert!(value < 1e-6, "loss {value}");
    }

    #[test]
    fn infonce_needs_two_samples() {
        let cfg = {
            let mut c = tiny_cfg();
            c.method = Method::Infonce;
            c
        };
        let state = tiny_state(&cfg);
        let batch = normal_matrix(1, 6, 3);
        assert!(matches!(
            infonce_step(
                &state.online,
                &batch,
                &cfg,
                ViewSeeds { view1: 1, view2: 2 }
            ),
            Err(TensorError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn target_network_is_outside_the_tape() {
        // The step's gradient vector covers exactly the online parameters;
        // target parameters have no tape nodes at all, and the step leaves
        // the target bit-identical.
        let cfg = tiny_cfg();
        let state = tiny_state(&cfg);
        let before: Vec<f64> = {
            let mut v = Vec::new();
            let mut t = state.target.clone();
            t.encoder.visit_params_mut(&mut |p| v.extend_from_slice(p.data()));
            v
        };
        let batch = normal_matrix(8, 6, 80);
        let out = byol_step(&state, &batch, &cfg, ViewSeeds { view1: 1, view2: 2 }).unwrap();
        assert_eq!(out.grads.len(), state.online.param_count());
        let after: Vec<f64> = {
            let mut v = Vec::new();
            let mut t = state.target.clone();
            t.encoder.visit_params_mut(&mut |p| v.extend_from_slice(p.data()));
            v
        };
        assert_eq!(before, after);
    }

    #[test]
    fn vicreg_tape_builders_match_plain_losses() {
        let h = normal_matrix(20, 5, 91);
        for divisor in [CovDivisor::NMinusOne, CovDivisor::N] {
            let mut tape = Tape::new();
            let hn = tape.param(h.clone());
            let v = vicreg_variance_on_tape(&mut tape, hn, 1.0, 1e-4, divisor).unwrap();
            let plain = vicreg_variance_loss_with(&h, 1.0, 1e-4, divisor).unwrap();
            assert!((tape.scalar(v).unwrap() - plain).abs() < 1e-12);

            let c = vicreg_covariance_on_tape(&mut tape, hn, divisor).unwrap();
            let plain = vicreg_covariance_loss_with(&h, divisor).unwrap();
            assert!((tape.scalar(c).unwrap() - plain).abs() < 1e-10);
        }
    }

    #[test]
    fn vicreg_tape_gradients_match_fd() {
        let h0 = normal_matrix(10, 4, 92);
        let grad_of = |build: &dyn Fn(&mut Tape, NodeId) -> NodeId, at: &Matrix| {
            let mut tape = Tape::new();
            let hn = tape.param(at.clone());
            let loss = build(&mut tape, hn);
            (
                tape.scalar(loss).unwrap(),
                tape.gradients(loss, &[hn]).unwrap().remove(0),
            )
        };
        let builders: Vec<(&str, Box<dyn Fn(&mut Tape, NodeId) -> NodeId>)> = vec![
            (
                "variance",
                Box::new(|t: &mut Tape, h: NodeId| {
                    vicreg_variance_on_tape(t, h, 1.0, 1e-4, CovDivisor::NMinusOne).unwrap()
                }),
            ),
            (
                "covariance",
                Box::new(|t: &mut Tape, h: NodeId| {
                    vicreg_covariance_on_tape(t, h, CovDivisor::NMinusOne).unwrap()
                }),
            ),
        ];
        for (name, build) in &builders {
            let (_, grad) = grad_of(build.as_ref(), &h0);
            let fd_h = 1e-5;
            for &(i, j) in &[(0, 0), (3, 2), (9, 3), (5, 1)] {
                let mut plus = h0.clone();
                plus.set(i, j, h0.get(i, j) + fd_h);
                let mut minus = h0.clone();
                minus.set(i, j, h0.get(i, j) - fd_h);
                let (lp, _) = grad_of(build.as_ref(), &plus);
                let (lm, _) = grad_of(build.as_ref(), &minus);
                let fd = (lp - lm) / (2.0 * fd_h);
                let an = grad.get(i, j);
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "{name} ({i},{j}): analytic {an}, fd {fd}"
                );
            }
        }
    }
}
