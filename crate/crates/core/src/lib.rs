//! Orthogonality regularization for neural-network weight matrices, together
//! with the eigenspectrum diagnostics needed to observe dimensional collapse
//! and a small deterministic joint-embedding SSL harness to exercise both.
//!
//! The crate is organized bottom-up:
//!
//! - [`matrix`] / [`eig`] / [`tape`] / [`rng`]: dense `f64` matrices with
//!   deterministic accumulation order, a cyclic Jacobi symmetric eigensolver,
//!   a two-step power-iteration spectral-norm estimator, reverse-mode
//!   differentiation over matrix ops, and seeded sampling utilities.
//! - [`reg`]: the SO and SRIP orthogonality penalties, the encoder-wide sum,
//!   the combined training objective, and VICReg-style whitening losses.
//! - [`spectra`]: normalized eigenvalue spectra, effective rank, filter
//!   correlation matrices, whitening/norm-preservation property checks, and
//!   collapse reports over weights and feature stages.
//! - [`io`]: the MATX binary matrix format, checkpoint bundles, the conv
//!   filter reshape, and report serialization.
//! - [`ssl`]: synthetic data, BYOL-lite / InfoNCE-lite training with the
//!   regularizers plugged in, and a linear probe.
//! - [`check`]: runnable property suites (used by the CLI `check` command
//!   and the acceptance tests).

pub mod check;
pub mod eig;
pub mod io;
pub mod matrix;
pub mod reg;
pub mod rng;
pub mod spectra;
pub mod ssl;
pub mod tape;

pub use eig::{power_iter_specnorm, power_iter_specnorm_with_v0, sym_eig, Eigensystem};
pub use matrix::{Matrix, TensorError};
pub use tape::{NodeId, Tape, TapeGradients};
