//! Desk-scale joint-embedding SSL training harness.
//!
//! Two methods are provided: a BYOL-style dual-network setup (online encoder,
//! projector, predictor regressed onto an EMA target via the symmetrized
//! cosine loss) and a SimCLR-style symmetric InfoNCE over in-batch negatives.
//! Orthogonality pressure attaches per the combined objective
//! `loss_ssl + gamma * loss_or` with the OR sum taken over the online
//! encoder's linear/conv weights only; feature whitening attaches variance
//! and covariance terms to the predictor (or projector) outputs instead.
//!
//! Everything is a pure function of the config: data generation, weight
//! init, batch order, view augmentations, SRIP start vectors, and the probe
//! split all derive from the config seed through fixed stream tags. Two runs
//! with the same config produce bit-identical logs.

pub mod data;
pub mod net;
pub mod probe;
pub mod steps;

use serde::{Deserialize, Serialize};

use crate::matrix::{Matrix, TensorError};
use crate::reg::{combined_loss, or_value_and_grads_ref, RegKind, RegularizerConfig};
use crate::rng::{mix_seed, shuffled_indices};
use crate::spectra::{collapse_report, effective_rank, CollapseOptions, CollapseReport, Eigenspectrum};

pub use data::{augment, gen_synthetic, AugmentConfig, DataConfig};
pub use net::{Activation, DualNetState, EncoderNet, Mlp, OnlineNet, TargetNet};
pub use probe::{linear_probe, ProbeConfig};
pub use steps::{byol_step, infonce_step, StepOutput, ViewSeeds};

/// Seed-stream tags; every derived stream mixes one of these with the run
/// seed so the streams never collide.
mod stream {
    pub const DATA: u64 = 0xD0;
    pub const INIT: u64 = 0x11;
    pub const SHUFFLE: u64 = 0x5F;
    pub const AUG: u64 = 0xA6;
    pub const SRIP: u64 = 0x52;
    pub const PROBE: u64 = 0xB0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Byol,
    Infonce,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Byol => "byol",
            Method::Infonce => "infonce",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "byol" => Some(Method::Byol),
            "infonce" => Some(Method::Infonce),
            _ => None,
        }
    }
}

/// Network widths: encoder input -> hidden -> repr, projector/predictor
/// width, optional leading conv block (channels, kernel).
#[derive(Debug, Clone, PartialEq)]
pub struct DimsConfig {
    pub hidden: usize,
    pub repr: usize,
    /// None drops the projector: the SSL loss applies to representations.
    pub proj: Option<usize>,
    pub conv: Option<(usize, usize)>,
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub method: Method,
    pub regularizer: RegularizerConfig,
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub dims: DimsConfig,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub ema_tau: f64,
    pub temperature: f64,
    pub probe: ProbeConfig,
    pub spectra: CollapseOptions,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: a 20 -> 64 -> 32 encoder on 5k synthetic points
    /// in 4 clusters, 200 epochs at batch 256. The regularizer defaults to
    /// none with gamma 1e-3, the re-tuned desk-scale weight (published
    /// full-scale recipes are far smaller and would be inert here).
    fn default() -> TrainConfig {
        let mut regularizer = RegularizerConfig::new(RegKind::None);
        regularizer.gamma = 1e-3;
        TrainConfig {
            seed: 1,
            method: Method::Byol,
            regularizer,
            data: DataConfig {
                n_samples: 5000,
                dim: 20,
                n_clusters: 4,
                cluster_std: 0.8,
            },
            augment: AugmentConfig {
                noise_std: 0.25,
                mask_prob: 0.1,
            },
            dims: DimsConfig {
                hidden: 64,
                repr: 32,
                proj: Some(16),
                conv: None,
            },
            activation: Activation::Tanh,
            epochs: 200,
            batch_size: 256,
            lr: 0.1,
            ema_tau: 0.99,
            temperature: 0.5,
            probe: ProbeConfig {
                epochs: 300,
                lr: 0.5,
            },
            spectra: CollapseOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.data.n_samples == 0 || self.data.dim == 0 {
            return Err("data.n_samples and data.dim must be positive".into());
        }
        if self.data.n_clusters < 2 {
            return Err("data.n_clusters must be at least 2".into());
        }
        if self.data.cluster_std < 0.0 {
            return Err("data.cluster_std must be non-negative".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err("epochs and batch_size must be positive".into());
        }
        if self.batch_size < 2 && self.method == Method::Infonce {
            return Err("infonce needs batch_size >= 2".into());
        }
        if self.dims.hidden == 0 || self.dims.repr == 0 {
            return Err("dims.hidden and dims.repr must be positive".into());
        }
        if self.dims.proj == Some(0) {
            return Err("dims.proj must be positive or none".into());
        }
        if let Some((channels, kernel)) = self.dims.conv {
            if channels == 0 || kernel == 0 {
                return Err("dims.conv channels and kernel must be positive".into());
            }
            if kernel > self.data.dim {
                return Err("dims.conv kernel exceeds data.dim".into());
            }
        }
        if !(0.0..1.0).contains(&self.ema_tau) {
            return Err("ema_tau must be in [0, 1)".into());
        }
        if self.lr <= 0.0 {
            return Err("lr must be positive".into());
        }
        if self.temperature <= 0.0 {
            return Err("temperature must be positive".into());
        }
        if self.augment.noise_std < 0.0 {
            return Err("augment.noise_std must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.augment.mask_prob) {
            return Err("augment.mask_prob must be in [0, 1]".into());
        }
        if self.regularizer.gamma < 0.0 {
            return Err("regularizer.gamma must be non-negative".into());
        }
        if self.probe.epochs == 0 || self.probe.lr <= 0.0 {
            return Err("probe.epochs and probe.lr must be positive".into());
        }
        Ok(())
    }

    /// Whether OR terms contribute to this run (kind so/srip and gamma > 0).
    pub fn or_active(&self) -> bool {
        self.regularizer.kind.is_or() && self.regularizer.gamma != 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub loss_ssl: f64,
    pub loss_or: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean SSL loss over the epoch's steps.
    pub loss_ssl: f64,
    /// Mean OR loss over the epoch's steps.
    pub loss_or: f64,
    /// `loss_ssl + gamma * loss_or` recomputed from the two means.
    pub combined: f64,
    /// Effective rank of the held-out batch's representations.
    pub repr_effective_rank: Option<f64>,
}

/// Full per-run trace. Two runs with the same config serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub final_report: CollapseReport,
    pub probe_accuracy: f64,
    pub diverged: bool,
}

#[derive(Debug)]
pub enum TrainError {
    Config(String),
    /// Training hit a non-finite loss; the boxed log holds everything up to
    /// the last finite step.
    Diverged(Box<TrainLog>),
    Tensor(TensorError),
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainError::Config(msg) => write!(f, "invalid config: {msg}"),
            TrainError::Diverged(_) => write!(f, "training diverged (non-finite loss)"),
            TrainError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> TrainError {
        TrainError::Tensor(e)
    }
}

fn gather_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), m.cols(), |i, j| m.get(rows[i], j))
}

fn build_state(cfg: &TrainConfig) -> DualNetState {
    let seed = mix_seed(cfg.seed, &[stream::INIT]);
    let encoder = EncoderNet::new(
        cfg.data.dim,
        cfg.dims.hidden,
        cfg.dims.repr,
        cfg.dims.conv,
        cfg.activation,
        mix_seed(seed, &[1]),
    );
    let repr_dim = cfg.dims.repr;
    let projector = cfg.dims.proj.map(|p| {
        Mlp::new("projector", repr_dim, p, p, cfg.activation, mix_seed(seed, &[2]))
    });
    let pred_dim = cfg.dims.proj.unwrap_or(repr_dim);
    let predictor = Mlp::new(
        "predictor",
        pred_dim,
        pred_dim,
        pred_dim,
        cfg.activation,
        mix_seed(seed, &[3]),
    );
    DualNetState::new(
        OnlineNet {
            encoder,
            projector,
            predictor,
        },
        cfg.ema_tau,
    )
}

fn finish_log(
    cfg: &TrainConfig,
    state: &DualNetState,
    data: &Matrix,
    labels: &[usize],
    eval_batch: &Matrix,
    steps: Vec<StepLog>,
    epochs: Vec<EpochLog>,
    diverged: bool,
) -> Result<TrainLog, TensorError> {
    let layers: Vec<_> = state
        .online
        .encoder
        .layer_specs()
        .into_iter()
        .cloned()
        .collect();
    let stages = state.online.encoder.forward_stages(eval_batch);
    let final_report = collapse_report(&layers, &stages, &cfg.spectra);
    let repr_all = state.online.encoder.forward(data);
    let probe_accuracy = linear_probe(
        &repr_all,
        labels,
        &cfg.probe,
        mix_seed(cfg.seed, &[stream::PROBE]),
    )?;
    Ok(TrainLog {
        steps,
        epochs,
        final_report,
        probe_accuracy,
        diverged,
    })
}

/// Runs a full training experiment: per step, the SSL loss (plus whitening
/// terms when configured), the OR sum over the online encoder when active,
/// one plain-SGD descent on the combined objective, then an EMA blend of the
/// target (BYOL only). Aborts with the last finite log on divergence.
pub fn train(cfg: &TrainConfig) -> Result<TrainLog, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let (data, labels) = gen_synthetic(&cfg.data, mix_seed(cfg.seed, &[stream::DATA]));
    let mut state = build_state(cfg);

    let n = data.rows();
    let eval_rows: Vec<usize> = (0..cfg.batch_size.min(n)).collect();
    let eval_batch = gather_rows(&data, &eval_rows);

    let or_active = cfg.or_active();
    let gamma = if or_active { cfg.regularizer.gamma } else { 0.0 };
    let enc_weight_idx = state.online.encoder_weight_indices();

    let mut steps: Vec<StepLog> = Vec::new();
    let mut epochs: Vec<EpochLog> = Vec::new();
    let mut global_step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(n, mix_seed(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        let mut ssl_sum = 0.0;
        let mut or_sum = 0.0;
        let mut count = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            if cfg.method == Method::Infonce && chunk.len() < 2 {
                // A trailing single-sample batch has no negatives; skip it.
                continue;
            }
            let batch = gather_rows(&data, chunk);
            let seeds = ViewSeeds {
                view1: mix_seed(cfg.seed, &[stream::AUG, global_step, 1]),
                view2: mix_seed(cfg.seed, &[stream::AUG, global_step, 2]),
            };
            let step_out = match cfg.method {
                Method::Byol => byol_step(&state, &batch, cfg, seeds)?,
                Method::Infonce => infonce_step(&state.online, &batch, cfg, seeds)?,
            };

            let (loss_or, or_grads) = if or_active {
                let mut reg = cfg.regularizer.clone();
                reg.srip_seed = mix_seed(reg.srip_seed, &[stream::SRIP, global_step]);
                let layer_refs = state.online.encoder.layer_specs();
                or_value_and_grads_ref(&layer_refs, &reg, true)
            } else {
                (0.0, Vec::new())
            };

            let combined = combined_loss(step_out.loss_ssl, loss_or, gamma);
            if !combined.is_finite() {
                let log = finish_log(
                    cfg, &state, &data, &labels, &eval_batch, steps, epochs, true,
                )?;
                return Err(TrainError::Diverged(Box::new(log)));
            }
            steps.push(StepLog {
                epoch,
                step: count,
                loss_ssl: step_out.loss_ssl,
                loss_or,
                combined,
            });
            ssl_sum += step_out.loss_ssl;
            or_sum += loss_or;
            count += 1;

            let mut updates = step_out.grads;
            if or_active {
                for (k, &pidx) in enc_weight_idx.iter().enumerate() {
                    if let Some(g) = or_grads.get(k).and_then(|g| g.as_ref()) {
                        updates[pidx]
                            .add_scaled(gamma, g)
                            .expect("gradient shapes agree");
                    }
                }
            }
            let mut i = 0;
            state.online.visit_params_mut(&mut |p| {
                p.add_scaled(-cfg.lr, &updates[i]).expect("update shapes agree");
                i += 1;
            });
            if cfg.method == Method::Byol {
                state.ema_update();
            }
            global_step += 1;
        }

        let denom = count.max(1) as f64;
        let loss_ssl = ssl_sum / denom;
        let loss_or = or_sum / denom;
        let repr = state.online.encoder.forward(&eval_batch);
        let repr_effective_rank = Eigenspectrum::from_samples("representations", &repr)
            .ok()
            .and_then(|s| effective_rank(&s).ok());
        epochs.push(EpochLog {
            epoch,
            loss_ssl,
            loss_or,
            combined: combined_loss(loss_ssl, loss_or, gamma),
            repr_effective_rank,
        });
    }

    finish_log(
        cfg, &state, &data, &labels, &eval_batch, steps, epochs, false,
    )
    .map_err(TrainError::from)
}
