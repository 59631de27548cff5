//! Dimensional-collapse diagnostics.
//!
//! The central object is the normalized eigenvalue spectrum of a covariance
//! matrix: eigenvalues sorted non-increasing and divided by the largest one.
//! A flat spectrum means every direction carries information; a fast decay
//! means a few directions dominate, i.e. the matrix has collapsed
//! dimensionally. Reports aggregate spectra over weight matrices and feature
//! stages, along with effective ranks and decay indices.

use serde::{Deserialize, Serialize};

use crate::eig::sym_eig;
use crate::matrix::{Matrix, TensorError};
use crate::reg::LayerSpec;

/// Largest eigenvalue at or below this is treated as a degenerate spectrum.
pub const DEGENERATE_LAMBDA: f64 = 1e-15;

/// Descending covariance eigenvalues with their normalized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenspectrum {
    /// Layer name or feature stage this spectrum describes.
    pub source: String,
    /// Eigenvalues in non-increasing order.
    pub raw: Vec<f64>,
    /// `raw` divided by `raw[0]`; all zeros when the spectrum is degenerate.
    pub normalized: Vec<f64>,
    /// Number of raw entries that are zero or negative.
    pub nonpositive_count: usize,
    pub dim: usize,
    /// Set when the largest eigenvalue is at or below [`DEGENERATE_LAMBDA`]
    /// (or the stage could not be analyzed at all).
    pub degenerate: bool,
}

impl Eigenspectrum {
    /// Spectrum of the covariance of `t`'s rows (rows are samples).
    pub fn from_samples(
        source: impl Into<String>,
        t: &Matrix,
    ) -> Result<Eigenspectrum, TensorError> {
        let cov = t.covariance()?;
        let eig = sym_eig(&cov)?;
        Ok(Eigenspectrum::from_raw(source, eig.eigenvalues))
    }

    /// Spectrum from already-computed eigenvalues (sorted non-increasing).
    pub fn from_raw(source: impl Into<String>, mut raw: Vec<f64>) -> Eigenspectrum {
        raw.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
        let dim = raw.len();
        let nonpositive_count = raw.iter().filter(|&&v| v <= 0.0).count();
        let degenerate = raw.first().map_or(true, |&top| top <= DEGENERATE_LAMBDA);
        let normalized = if degenerate {
            vec![0.0; dim]
        } else {
            let top = raw[0];
            raw.iter().map(|&v| v / top).collect()
        };
        Eigenspectrum {
            source: source.into(),
            raw,
            normalized,
            nonpositive_count,
            dim,
            degenerate,
        }
    }

    /// Placeholder for a stage that could not be analyzed.
    pub fn empty_degenerate(source: impl Into<String>) -> Eigenspectrum {
        Eigenspectrum {
            source: source.into(),
            raw: Vec::new(),
            normalized: Vec::new(),
            nonpositive_count: 0,
            dim: 0,
            degenerate: true,
        }
    }

    /// First index whose normalized value drops below `threshold`.
    pub fn decay_index(&self, threshold: f64) -> Option<usize> {
        if self.degenerate {
            return None;
        }
        self.normalized.iter().position(|&v| v < threshold)
    }
}

/// Normalized eigenvalue spectrum of the covariance of `t`'s rows.
pub fn normalized_eigenvalues(t: &Matrix) -> Result<Eigenspectrum, TensorError> {
    Eigenspectrum::from_samples("", t)
}

/// Entropy-based effective rank: `exp(-sum p_i ln p_i)` over the positive
/// eigenvalue mass. In `[1, dim]`; `dim` for a flat spectrum, 1 for rank one.
pub fn effective_rank(spec: &Eigenspectrum) -> Result<f64, TensorError> {
    let total: f64 = spec.raw.iter().map(|&v| v.max(0.0)).sum();
    if total <= 0.0 {
        return Err(TensorError::NoPositiveEigenvalue);
    }
    let mut entropy = 0.0;
    for &v in &spec.raw {
        let p = v.max(0.0) / total;
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    Ok(entropy.exp())
}

/// Column variance below this flags the column as zero-variance.
const ZERO_VARIANCE_TOL: f64 = 1e-24;

/// Absolute Pearson correlations between the columns of `w` (columns are
/// filters, rows are input dimensions). Zero-variance columns get their whole
/// row and column set to 0 and a warning is logged.
pub fn correlation_matrix(w: &Matrix) -> Result<Matrix, TensorError> {
    if w.rows() < 2 {
        return Err(TensorError::InsufficientSamples {
            rows: w.rows(),
            needed: 2,
        });
    }
    let cov = w.covariance()?;
    let d = cov.rows();
    let flagged: Vec<bool> = (0..d).map(|i| cov.get(i, i) < ZERO_VARIANCE_TOL).collect();
    if flagged.iter().any(|&f| f) {
        log::warn!(
            "correlation_matrix: {} zero-variance column(s) flagged 0",
            flagged.iter().filter(|&&f| f).count()
        );
    }
    let mut corr = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if flagged[i] || flagged[j] {
                continue;
            }
            let denom = (cov.get(i, i) * cov.get(j, j)).sqrt();
            corr.set(i, j, (cov.get(i, j) / denom).abs().min(1.0));
        }
    }
    Ok(corr)
}

/// Outcome of the whitening-preservation check: with zero-mean isotropic
/// input and orthonormal weight columns, the mapped samples stay zero-mean
/// and isotropic with the same scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningCheck {
    /// Whether the inputs satisfied the preconditions at `tol`.
    pub precondition_ok: bool,
    /// `max |W^T W - I|` of the weight.
    pub w_gram_dev: f64,
    /// `max |mean(X)|`.
    pub x_mean_dev: f64,
    /// `max |cov(X) - sigma^2 I|`.
    pub x_cov_dev: f64,
    /// Scale estimated from the input: `trace(cov(X)) / D`.
    pub sigma_sq: f64,
    /// `max |mean(S)|` for `S = X W`.
    pub s_mean_dev: f64,
    /// `|cov(S) - sigma^2 I|_F`.
    pub s_cov_dev: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Checks that `S = X W` preserves zero mean and isotropic covariance when
/// `X` is whitened and `W` has orthonormal columns. Precondition violations
/// are reported in the result, never raised as errors.
pub fn prop1_whitening_check(
    w: &Matrix,
    x: &Matrix,
    tol: f64,
) -> Result<WhiteningCheck, TensorError> {
    if x.cols() != w.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "whitening check",
            left: x.shape(),
            right: w.shape(),
        });
    }
    let gram = w.transpose().matmul(w)?;
    let w_gram_dev = gram.sub(&Matrix::identity(w.cols()))?.max_abs();

    let x_cov = x.covariance()?;
    let d = x.cols();
    let sigma_sq = x_cov.trace()? / d as f64;
    let x_mean_dev = x
        .column_means()
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let x_cov_dev = x_cov.sub(&Matrix::identity(d).scale(sigma_sq))?.max_abs();
    let precondition_ok = w_gram_dev <= tol && x_mean_dev <= tol && x_cov_dev <= tol;

    let s = x.matmul(w)?;
    let s_mean_dev = s
        .column_means()
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let s_cov = s.covariance()?;
    let s_cov_dev = s_cov
        .sub(&Matrix::identity(w.cols()).scale(sigma_sq))?
        .frobenius_norm();
    let passed = precondition_ok && s_mean_dev <= tol && s_cov_dev <= tol;

    Ok(WhiteningCheck {
        precondition_ok,
        w_gram_dev,
        x_mean_dev,
        x_cov_dev,
        sigma_sq,
        s_mean_dev,
        s_cov_dev,
        tol,
        passed,
    })
}

/// Outcome of a squared-Frobenius-norm preservation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormCheck {
    /// False when the weight is not square (the identity only holds there).
    pub applicable: bool,
    pub input_norm_sq: f64,
    pub output_norm_sq: f64,
    pub rel_dev: f64,
    pub passed: bool,
}

impl NormCheck {
    fn not_applicable() -> NormCheck {
        NormCheck {
            applicable: false,
            input_norm_sq: 0.0,
            output_norm_sq: 0.0,
            rel_dev: 0.0,
            passed: false,
        }
    }

    fn evaluate(input_norm_sq: f64, output_norm_sq: f64) -> NormCheck {
        let rel_dev =
            (output_norm_sq - input_norm_sq).abs() / input_norm_sq.max(f64::MIN_POSITIVE);
        NormCheck {
            applicable: true,
            input_norm_sq,
            output_norm_sq,
            rel_dev,
            passed: rel_dev <= 1e-9,
        }
    }
}

/// Checks `|X W|_F^2 = |X|_F^2` for square orthogonal `W`.
pub fn prop1_norm_check(w: &Matrix, x: &Matrix) -> Result<NormCheck, TensorError> {
    if w.rows() != w.cols() {
        return Ok(NormCheck::not_applicable());
    }
    let s = x.matmul(w)?;
    Ok(NormCheck::evaluate(
        x.frobenius_norm_sq(),
        s.frobenius_norm_sq(),
    ))
}

/// Checks that mapping an output-side gradient back through `W^T` preserves
/// its squared Frobenius norm for square orthogonal `W`.
pub fn prop1_gradnorm_check(w: &Matrix, g: &Matrix) -> Result<NormCheck, TensorError> {
    if w.rows() != w.cols() {
        return Ok(NormCheck::not_applicable());
    }
    let back = g.matmul(&w.transpose())?;
    Ok(NormCheck::evaluate(
        g.frobenius_norm_sq(),
        back.frobenius_norm_sq(),
    ))
}

/// Which axis of a weight matrix plays the sample role in its spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightAxis {
    /// Rows are samples, columns (filters) are features. Gives one
    /// eigenvalue per output filter.
    Rows,
    /// Transpose first: columns are samples.
    Cols,
}

impl WeightAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightAxis::Rows => "rows",
            WeightAxis::Cols => "cols",
        }
    }

    pub fn parse(s: &str) -> Option<WeightAxis> {
        match s {
            "rows" => Some(WeightAxis::Rows),
            "cols" => Some(WeightAxis::Cols),
            _ => None,
        }
    }
}

/// Options for [`collapse_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseOptions {
    pub weight_axis: WeightAxis,
    /// Upper decay threshold on normalized values (default 1e-2).
    pub decay_hi: f64,
    /// Lower decay threshold on normalized values (default 1e-4).
    pub decay_lo: f64,
}

impl Default for CollapseOptions {
    fn default() -> CollapseOptions {
        CollapseOptions {
            weight_axis: WeightAxis::Rows,
            decay_hi: 1e-2,
            decay_lo: 1e-4,
        }
    }
}

/// One analyzed stage: its spectrum plus scalar decay summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub spectrum: Eigenspectrum,
    /// None when the spectrum has no positive eigenvalue.
    pub effective_rank: Option<f64>,
    /// First index where the normalized value drops below `decay_hi`.
    pub decay_below_hi: Option<usize>,
    /// First index where the normalized value drops below `decay_lo`.
    pub decay_below_lo: Option<usize>,
}

impl StageReport {
    fn from_spectrum(spectrum: Eigenspectrum, opts: &CollapseOptions) -> StageReport {
        let effective_rank = effective_rank(&spectrum).ok();
        let decay_below_hi = spectrum.decay_index(opts.decay_hi);
        let decay_below_lo = spectrum.decay_index(opts.decay_lo);
        StageReport {
            spectrum,
            effective_rank,
            decay_below_hi,
            decay_below_lo,
        }
    }
}

/// Spectra over weight matrices (by layer) and feature stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub options: CollapseOptions,
    pub weights: Vec<StageReport>,
    pub features: Vec<StageReport>,
}

impl CollapseReport {
    pub fn stage_by_name(&self, name: &str) -> Option<&StageReport> {
        self.stages().find(|s| s.spectrum.source == name)
    }

    /// All stages in report order (weights first).
    pub fn stages(&self) -> impl Iterator<Item = &StageReport> {
        self.weights.iter().chain(self.features.iter())
    }
}

/// Builds a collapse report over layer weights and feature-stage matrices.
/// Per-stage failures become degenerate placeholder spectra; the report
/// itself never aborts.
pub fn collapse_report(
    layers: &[LayerSpec],
    stages: &[(String, Matrix)],
    opts: &CollapseOptions,
) -> CollapseReport {
    let weights = layers
        .iter()
        .map(|layer| {
            let m = match opts.weight_axis {
                WeightAxis::Rows => layer.weight.clone(),
                WeightAxis::Cols => layer.weight.transpose(),
            };
            let spectrum = Eigenspectrum::from_samples(layer.name.clone(), &m)
                .unwrap_or_else(|_| Eigenspectrum::empty_degenerate(layer.name.clone()));
            StageReport::from_spectrum(spectrum, opts)
        })
        .collect();
    let features = stages
        .iter()
        .map(|(name, m)| {
            let spectrum = Eigenspectrum::from_samples(name.clone(), m)
                .unwrap_or_else(|_| Eigenspectrum::empty_degenerate(name.clone()));
            StageReport::from_spectrum(spectrum, opts)
        })
        .collect();
    CollapseReport {
        options: opts.clone(),
        weights,
        features,
    }
}

/// Builds an exactly-whitened sample matrix: draws Gaussian data, then maps
/// it through the inverse square root of its own covariance, scaled by
/// `sigma`. Used by the property-check suites.
pub fn make_whitened(n: usize, d: usize, sigma: f64, seed: u64) -> Result<Matrix, TensorError> {
    assert!(n > d + 1, "need more samples than dimensions");
    let x0 = crate::rng::normal_matrix(n, d, seed);
    let means = x0.column_means();
    let centered = Matrix::from_fn(n, d, |i, j| x0.get(i, j) - means[j]);
    let cov = centered.covariance()?;
    let eig = sym_eig(&cov)?;
    // cov^(-1/2) = V diag(1/sqrt(lambda)) V^T
    let v = &eig.eigenvectors;
    let inv_sqrt = Matrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0 / eig.eigenvalues[i].sqrt()
        } else {
            0.0
        }
    });
    let transform = v.matmul(&inv_sqrt)?.matmul(&v.transpose())?;
    centered.matmul(&transform.scale(sigma))
}
