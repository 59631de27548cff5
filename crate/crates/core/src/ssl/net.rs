//! Encoder, projector, and predictor networks.
//!
//! The encoder is a stack of basic blocks (linear weight + bias + activation)
//! with an optional leading 1-D convolution block (valid padding, stride 1,
//! single input channel, flattened after the conv). Projector and predictor
//! are two-layer MLPs. The dual-network state pairs an online network with a
//! target copy that only ever changes through EMA blending.

use crate::matrix::{Matrix, TensorError};
use crate::reg::LayerSpec;
use crate::rng::{mix_seed, normal_matrix};
use crate::tape::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply_plain(self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        match self {
            Activation::Tanh => out.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
        }
        out
    }

    fn apply_tape(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// Linear weight plus bias row.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: LayerSpec,
    /// 1 x out bias row, broadcast over the batch.
    pub bias: Matrix,
}

impl DenseLayer {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize, seed: u64) -> DenseLayer {
        let weight = normal_matrix(in_dim, out_dim, seed).scale(1.0 / (in_dim as f64).sqrt());
        DenseLayer {
            weight: LayerSpec::linear(name, weight).expect("non-empty"),
            bias: Matrix::zeros(1, out_dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.weight.cols()
    }

    fn forward_plain(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weight.weight).expect("shapes compose");
        for i in 0..y.rows() {
            let start = i * y.cols();
            let cols = y.cols();
            for j in 0..cols {
                y.data_mut()[start + j] += self.bias.get(0, j);
            }
        }
        y
    }
}

/// Leading 1-D convolution over the flat feature axis: single input channel,
/// `channels` output channels, kernel width `kernel`, valid padding, stride
/// 1, flattened position-major afterwards.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    /// Weight in the 2-D convention: `kernel x channels`.
    pub weight: LayerSpec,
    pub bias: Matrix,
    pub channels: usize,
    pub kernel: usize,
}

impl ConvLayer {
    pub fn new(name: impl Into<String>, channels: usize, kernel: usize, seed: u64) -> ConvLayer {
        let weight = normal_matrix(kernel, channels, seed).scale(1.0 / (kernel as f64).sqrt());
        ConvLayer {
            weight: LayerSpec::conv(name, channels, 1, 1, kernel, weight).expect("valid"),
            bias: Matrix::zeros(1, channels),
            channels,
            kernel,
        }
    }

    pub fn out_dim(&self, in_dim: usize) -> usize {
        (in_dim - self.kernel + 1) * self.channels
    }

    /// Sliding-window patches: `(n * L) x kernel` with `L = dim - kernel + 1`.
    fn im2col(&self, x: &Matrix) -> Matrix {
        let l = x.cols() - self.kernel + 1;
        Matrix::from_fn(x.rows() * l, self.kernel, |r, k| {
            let (i, pos) = (r / l, r % l);
            x.get(i, pos + k)
        })
    }

    fn forward_plain(&self, x: &Matrix) -> Matrix {
        let n = x.rows();
        let l = x.cols() - self.kernel + 1;
        let y = self
            .im2col(x)
            .matmul(&self.weight.weight)
            .expect("shapes compose");
        let mut out = Matrix::zeros(n, l * self.channels);
        for i in 0..n {
            for pos in 0..l {
                for c in 0..self.channels {
                    out.set(i, pos * self.channels + c, y.get(i * l + pos, c) + self.bias.get(0, c));
                }
            }
        }
        out
    }
}

/// Encoder: optional conv block followed by dense blocks, activation after
/// every block.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    pub conv: Option<ConvLayer>,
    pub blocks: Vec<DenseLayer>,
    pub activation: Activation,
}

impl EncoderNet {
    pub fn new(
        input_dim: usize,
        hidden: usize,
        repr: usize,
        conv: Option<(usize, usize)>,
        activation: Activation,
        seed: u64,
    ) -> EncoderNet {
        let conv = conv.map(|(channels, kernel)| {
            assert!(kernel >= 1 && kernel <= input_dim, "conv kernel exceeds input dim");
            ConvLayer::new("encoder.conv", channels, kernel, mix_seed(seed, &[0]))
        });
        let dense_in = conv
            .as_ref()
            .map_or(input_dim, |c| c.out_dim(input_dim));
        let blocks = vec![
            DenseLayer::new("encoder.block1", dense_in, hidden, mix_seed(seed, &[1])),
            DenseLayer::new("encoder.block2", hidden, repr, mix_seed(seed, &[2])),
        ];
        EncoderNet {
            conv,
            blocks,
            activation,
        }
    }

    pub fn repr_dim(&self) -> usize {
        self.blocks.last().expect("non-empty encoder").out_dim()
    }

    /// The OR-eligible weight layers, in forward order.
    pub fn layer_specs(&self) -> Vec<&LayerSpec> {
        let mut specs = Vec::new();
        if let Some(conv) = &self.conv {
            specs.push(&conv.weight);
        }
        specs.extend(self.blocks.iter().map(|b| &b.weight));
        specs
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut h = x.clone();
        if let Some(conv) = &self.conv {
            h = self.activation.apply_plain(&conv.forward_plain(&h));
        }
        for block in &self.blocks {
            h = self.activation.apply_plain(&block.forward_plain(&h));
        }
        h
    }

    /// Forward pass keeping every stage: input, conv output (when present),
    /// each hidden block output, and the final representations.
    pub fn forward_stages(&self, x: &Matrix) -> Vec<(String, Matrix)> {
        let mut stages = vec![("input".to_string(), x.clone())];
        let mut h = x.clone();
        if let Some(conv) = &self.conv {
            h = self.activation.apply_plain(&conv.forward_plain(&h));
            stages.push(("conv".to_string(), h.clone()));
        }
        let last = self.blocks.len() - 1;
        for (k, block) in self.blocks.iter().enumerate() {
            h = self.activation.apply_plain(&block.forward_plain(&h));
            let name = if k == last {
                "representations".to_string()
            } else {
                format!("hidden{}", k + 1)
            };
            stages.push((name, h.clone()));
        }
        stages
    }

    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(&'a Matrix)) {
        if let Some(conv) = &self.conv {
            f(&conv.weight.weight);
            f(&conv.bias);
        }
        for block in &self.blocks {
            f(&block.weight.weight);
            f(&block.bias);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut Matrix)) {
        if let Some(conv) = &mut self.conv {
            f(&mut conv.weight.weight);
            f(&mut conv.bias);
        }
        for block in &mut self.blocks {
            f(&mut block.weight.weight);
            f(&mut block.bias);
        }
    }
}

/// Two-layer MLP (linear, activation, linear) for projector and predictor.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub l1: DenseLayer,
    pub l2: DenseLayer,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        prefix: &str,
        in_dim: usize,
        mid: usize,
        out: usize,
        activation: Activation,
        seed: u64,
    ) -> Mlp {
        Mlp {
            l1: DenseLayer::new(format!("{prefix}.l1"), in_dim, mid, mix_seed(seed, &[1])),
            l2: DenseLayer::new(format!("{prefix}.l2"), mid, out, mix_seed(seed, &[2])),
            activation,
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let h = self.activation.apply_plain(&self.l1.forward_plain(x));
        self.l2.forward_plain(&h)
    }

    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(&'a Matrix)) {
        f(&self.l1.weight.weight);
        f(&self.l1.bias);
        f(&self.l2.weight.weight);
        f(&self.l2.bias);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut Matrix)) {
        f(&mut self.l1.weight.weight);
        f(&mut self.l1.bias);
        f(&mut self.l2.weight.weight);
        f(&mut self.l2.bias);
    }
}

/// Online side: encoder, optional projector, predictor.
#[derive(Debug, Clone)]
pub struct OnlineNet {
    pub encoder: EncoderNet,
    pub projector: Option<Mlp>,
    pub predictor: Mlp,
}

impl OnlineNet {
    /// Canonical parameter order: encoder (conv then blocks, weight before
    /// bias), projector, predictor. All gradient vectors use this order.
    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(&'a Matrix)) {
        self.encoder.visit_params(f);
        if let Some(proj) = &self.projector {
            proj.visit_params(f);
        }
        self.predictor.visit_params(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut Matrix)) {
        self.encoder.visit_params_mut(f);
        if let Some(proj) = &mut self.projector {
            proj.visit_params_mut(f);
        }
        self.predictor.visit_params_mut(f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_| n += 1);
        n
    }

    /// Indices (in canonical parameter order) of the encoder weight
    /// matrices, aligned with `encoder.layer_specs()`.
    pub fn encoder_weight_indices(&self) -> Vec<usize> {
        let mut indices = Vec::new();
        let mut idx = 0;
        if self.encoder.conv.is_some() {
            indices.push(idx);
            idx += 2;
        }
        for _ in &self.encoder.blocks {
            indices.push(idx);
            idx += 2;
        }
        indices
    }

    /// Encoder then projector output (identity projector when absent).
    pub fn project(&self, x: &Matrix) -> Matrix {
        let repr = self.encoder.forward(x);
        match &self.projector {
            Some(proj) => proj.forward(&repr),
            None => repr,
        }
    }
}

/// Target side: structural copy of encoder + projector. Never receives
/// gradients; only EMA blends move it.
#[derive(Debug, Clone)]
pub struct TargetNet {
    pub encoder: EncoderNet,
    pub projector: Option<Mlp>,
}

impl TargetNet {
    pub fn project(&self, x: &Matrix) -> Matrix {
        let repr = self.encoder.forward(x);
        match &self.projector {
            Some(proj) => proj.forward(&repr),
            None => repr,
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut Matrix)) {
        self.encoder.visit_params_mut(f);
        if let Some(proj) = &mut self.projector {
            proj.visit_params_mut(f);
        }
    }
}

/// Online network plus its EMA target.
#[derive(Debug, Clone)]
pub struct DualNetState {
    pub online: OnlineNet,
    pub target: TargetNet,
    pub ema_tau: f64,
}

impl DualNetState {
    pub fn new(online: OnlineNet, ema_tau: f64) -> DualNetState {
        assert!((0.0..1.0).contains(&ema_tau), "ema_tau must be in [0, 1)");
        let target = TargetNet {
            encoder: online.encoder.clone(),
            projector: online.projector.clone(),
        };
        DualNetState {
            online,
            target,
            ema_tau,
        }
    }

    /// Parameter-wise `target <- tau * target + (1 - tau) * online` over the
    /// shared encoder + projector structure.
    pub fn ema_update(&mut self) {
        let tau = self.ema_tau;
        let mut online_params: Vec<&Matrix> = Vec::new();
        self.online.encoder.visit_params(&mut |p| online_params.push(p));
        if let Some(proj) = &self.online.projector {
            proj.visit_params(&mut |p| online_params.push(p));
        }
        let mut i = 0;
        self.target.visit_params_mut(&mut |t| {
            let o = online_params[i];
            for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
                *tv = tau * *tv + (1.0 - tau) * ov;
            }
            i += 1;
        });
        debug_assert_eq!(i, online_params.len());
    }
}

/// Tape-registered parameter nodes mirroring an [`OnlineNet`].
pub(crate) struct DenseNodes {
    w: NodeId,
    b: NodeId,
}

pub(crate) struct MlpNodes {
    l1: DenseNodes,
    l2: DenseNodes,
}

pub(crate) struct OnlineNodes {
    conv: Option<DenseNodes>,
    blocks: Vec<DenseNodes>,
    projector: Option<MlpNodes>,
    predictor: MlpNodes,
    /// Canonical flat order, matching [`OnlineNet::visit_params`].
    pub flat: Vec<NodeId>,
}

/// Outputs of one view's forward pass on the tape.
pub(crate) struct ForwardNodes {
    #[allow(dead_code)]
    pub repr: NodeId,
    pub proj: NodeId,
    pub pred: NodeId,
}

impl OnlineNodes {
    /// Registers every online parameter on the tape, in canonical order.
    pub fn register(tape: &mut Tape, net: &OnlineNet) -> OnlineNodes {
        let mut flat = Vec::new();
        let mut dense = |tape: &mut Tape, flat: &mut Vec<NodeId>, layer: &DenseLayer| {
            let w = tape.param(layer.weight.weight.clone());
            let b = tape.param(layer.bias.clone());
            flat.push(w);
            flat.push(b);
            DenseNodes { w, b }
        };
        let conv = net.encoder.conv.as_ref().map(|c| {
            let w = tape.param(c.weight.weight.clone());
            let b = tape.param(c.bias.clone());
            flat.push(w);
            flat.push(b);
            DenseNodes { w, b }
        });
        let blocks = net
            .encoder
            .blocks
            .iter()
            .map(|blk| dense(tape, &mut flat, blk))
            .collect();
        let projector = net.projector.as_ref().map(|p| MlpNodes {
            l1: dense(tape, &mut flat, &p.l1),
            l2: dense(tape, &mut flat, &p.l2),
        });
        let predictor = MlpNodes {
            l1: dense(tape, &mut flat, &net.predictor.l1),
            l2: dense(tape, &mut flat, &net.predictor.l2),
        };
        OnlineNodes {
            conv,
            blocks,
            projector,
            predictor,
            flat,
        }
    }

    /// Records one view's forward pass; the batch enters as a constant.
    pub fn forward(
        &self,
        tape: &mut Tape,
        net: &OnlineNet,
        view: &Matrix,
    ) -> Result<ForwardNodes, TensorError> {
        let n = view.rows();
        let ones_n = tape.constant(Matrix::from_fn(n, 1, |_, _| 1.0));
        let act = net.encoder.activation;

        let mut h = if let (Some(conv), Some(nodes)) = (&net.encoder.conv, &self.conv) {
            let l = view.cols() - conv.kernel + 1;
            let patches = tape.constant(conv.im2col(view));
            let y = tape.matmul(patches, nodes.w)?;
            let y2 = tape.reshape(y, n, l * conv.channels)?;
            let ones_l = tape.constant(Matrix::from_fn(l, 1, |_, _| 1.0));
            let btile = tape.matmul(ones_l, nodes.b)?;
            let brow = tape.reshape(btile, 1, l * conv.channels)?;
            let bfull = tape.matmul(ones_n, brow)?;
            let pre = tape.add(y2, bfull)?;
            act.apply_tape(tape, pre)
        } else {
            tape.constant(view.clone())
        };
        for nodes in &self.blocks {
            let pre = dense_on_tape(tape, nodes, h, ones_n)?;
            h = act.apply_tape(tape, pre);
        }
        let repr = h;

        let proj = match (&net.projector, &self.projector) {
            (Some(p), Some(nodes)) => mlp_on_tape(tape, nodes, p.activation, repr, ones_n)?,
            _ => repr,
        };
        let pred = mlp_on_tape(
            tape,
            &self.predictor,
            net.predictor.activation,
            proj,
            ones_n,
        )?;
        Ok(ForwardNodes { repr, proj, pred })
    }
}

fn dense_on_tape(
    tape: &mut Tape,
    nodes: &DenseNodes,
    x: NodeId,
    ones_n: NodeId,
) -> Result<NodeId, TensorError> {
    let xw = tape.matmul(x, nodes.w)?;
    let btile = tape.matmul(ones_n, nodes.b)?;
    tape.add(xw, btile)
}

fn mlp_on_tape(
    tape: &mut Tape,
    nodes: &MlpNodes,
    activation: Activation,
    x: NodeId,
    ones_n: NodeId,
) -> Result<NodeId, TensorError> {
    let pre = dense_on_tape(tape, &nodes.l1, x, ones_n)?;
    let mid = activation.apply_tape(tape, pre);
    dense_on_tape(tape, &nodes.l2, mid, ones_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_matrix;

    fn tiny_online(conv: Option<(usize, usize)>) -> OnlineNet {
        let encoder = EncoderNet::new(6, 5, 4, conv, Activation::Tanh, 11);
        let projector = Some(Mlp::new("projector", 4, 3, 3, Activation::Tanh, 12));
        let predictor = Mlp::new("predictor", 3, 3, 3, Activation::Tanh, 13);
        OnlineNet {
            encoder,
            projector,
            predictor,
        }
    }

    #[test]
    fn stages_compose_and_are_named() {
        let net = tiny_online(None);
        let x = normal_matrix(7, 6, 1);
        let stages = net.encoder.forward_stages(&x);
        let names: Vec<&str> = stages.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["input", "hidden1", "representations"]);
        assert_eq!(stages[2].1.shape(), (7, 4));
        assert_eq!(stages[2].1.data(), net.encoder.forward(&x).data());
    }

    #[test]
    fn conv_stage_present_when_configured() {
        let net = tiny_online(Some((3, 2)));
        let x = normal_matrix(4, 6, 1);
        let stages = net.encoder.forward_stages(&x);
        let names: Vec<&str> = stages.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["input", "conv", "hidden1", "representations"]);
        // Conv output: (6 - 2 + 1) positions x 3 channels = 15 features.
        assert_eq!(stages[1].1.shape(), (4, 15));
    }

    #[test]
    fn conv_forward_matches_direct_convolution() {
        let conv = ConvLayer::new("c", 2, 3, 5);
        let x = normal_matrix(3, 7, 6);
        let y = conv.forward_plain(&x);
        let l = 7 - 3 + 1;
        for i in 0..3 {
            for pos in 0..l {
                for c in 0..2 {
                    let mut acc = 0.0;
                    for k in 0..3 {
                        acc += x.get(i, pos + k) * conv.weight.weight.get(k, c);
                    }
                    acc += conv.bias.get(0, c);
                    let got = y.get(i, pos * 2 + c);
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        for conv in [None, Some((3, 2))] {
            let net = tiny_online(conv);
            let x = normal_matrix(5, 6, 21);
            let mut tape = Tape::new();
            let nodes = OnlineNodes::register(&mut tape, &net);
            let fwd = nodes.forward(&mut tape, &net, &x).unwrap();

            let repr_plain = net.encoder.forward(&x);
            assert_eq!(tape.value(fwd.repr).data(), repr_plain.data());
            let proj_plain = net.project(&x);
            assert_eq!(tape.value(fwd.proj).data(), proj_plain.data());
            let pred_plain = net.predictor.forward(&proj_plain);
            assert_eq!(tape.value(fwd.pred).data(), pred_plain.data());
        }
    }

    #[test]
    fn param_order_is_stable_and_counted() {
        let net = tiny_online(None);
        assert_eq!(net.param_count(), 4 + 4 + 4); // encoder 2 blocks + proj + pred
        let idx = net.encoder_weight_indices();
        assert_eq!(idx, vec![0, 2]);

        let with_conv = tiny_online(Some((2, 2)));
        assert_eq!(with_conv.encoder_weight_indices(), vec![0, 2, 4]);
    }

    #[test]
    fn ema_update_blends_parameters() {
        let net = tiny_online(None);
        let mut state = DualNetState::new(net, 0.0);
        // Move online away from target.
        state.online.visit_params_mut(&mut |p| {
            for v in p.data_mut() {
                *v += 1.0;
            }
        });
        state.ema_update();
        // tau = 0: target copies online exactly (encoder + projector).
        let mut online: Vec<Matrix> = Vec::new();
        state.online.encoder.visit_params(&mut |p| online.push(p.clone()));
        state
            .online
            .projector
            .as_ref()
            .unwrap()
            .visit_params(&mut |p| online.push(p.clone()));
        let mut i = 0;
        state.target.visit_params_mut(&mut |t| {
            assert_eq!(t.data(), online[i].data());
            i += 1;
        });
    }

    #[test]
    fn ema_geometric_convergence() {
        let net = tiny_online(None);
        let mut state = DualNetState::new(net, 0.99);
        state.online.visit_params_mut(&mut |p| {
            for v in p.data_mut() {
                *v += 1.0;
            }
        });
        let gap_at = |state: &mut DualNetState| {
            let mut target_first = None;
            state.target.visit_params_mut(&mut |t| {
                if target_first.is_none() {
                    target_first = Some(t.get(0, 0));
                }
            });
            let mut online_first = None;
            state.online.visit_params(&mut |p| {
                if online_first.is_none() {
                    online_first = Some(p.get(0, 0));
                }
            });
            (online_first.unwrap() - target_first.unwrap()).abs()
        };
        let g0 = gap_at(&mut state);
        state.ema_update();
        let g1 = gap_at(&mut state);
        assert!((g1 / g0 - 0.99).abs() < 1e-9, "gap ratio {}", g1 / g0);

        // Fixed point: target == online stays put.
        let mut fixed = DualNetState::new(tiny_online(None), 0.7);
        let before: Vec<f64> = {
            let mut v = Vec::new();
            fixed.target.encoder.visit_params(&mut |p| v.extend_from_slice(p.data()));
            v
        };
        fixed.ema_update();
        let after: Vec<f64> = {
            let mut v = Vec::new();
            fixed.target.encoder.visit_params(&mut |p| v.extend_from_slice(p.data()));
            v
        };
        assert_eq!(before, after);
    }
}
