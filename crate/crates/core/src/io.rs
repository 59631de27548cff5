//! Checkpoint and report persistence.
//!
//! Matrices travel as MATX files: a fixed little-endian header (`MATX` magic,
//! u16 version, u8 dtype code, u64 rows, u64 cols), the row-major f64
//! payload, and a trailing CRC32 of the payload. Round trips are bit-exact.
//!
//! A checkpoint bundle is a directory with a `manifest.json` listing layers
//! in order plus one MATX file per layer. Conv filters are stored in their
//! raw four-axis order (output-channel major) and reshaped to the 2-D
//! `(S*H*C_in) x C_out` convention on load.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::matrix::{Matrix, TensorError};
use crate::reg::{LayerKind, LayerSpec};
use crate::spectra::CollapseReport;

pub const MATX_MAGIC: [u8; 4] = *b"MATX";
pub const MATX_VERSION: u16 = 1;
pub const MATX_DTYPE_F64: u8 = 1;

const HEADER_LEN: usize = 4 + 2 + 1 + 8 + 8;

/// Errors raised by checkpoint and report IO.
#[derive(Debug)]
pub enum IoError {
    Io { path: PathBuf, source: std::io::Error },
    BadMagic { path: PathBuf },
    BadVersion { path: PathBuf, got: u16 },
    BadDtype { path: PathBuf, got: u8 },
    CrcMismatch { path: PathBuf, expected: u32, got: u32 },
    Truncated { path: PathBuf, needed: usize, got: usize },
    TrailingBytes { path: PathBuf, extra: usize },
    Manifest { path: PathBuf, message: String },
    Json { path: PathBuf, message: String },
    Tensor(TensorError),
}

impl std::fmt::Display for IoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IoError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            IoError::BadMagic { path } => write!(f, "{}: bad magic", path.display()),
            IoError::BadVersion { path, got } => {
                write!(f, "{}: unsupported version {got}", path.display())
            }
            IoError::BadDtype { path, got } => {
                write!(f, "{}: unsupported dtype code {got}", path.display())
            }
            IoError::CrcMismatch { path, expected, got } => write!(
                f,
                "{}: payload CRC mismatch (stored {expected:#010x}, computed {got:#010x})",
                path.display()
            ),
            IoError::Truncated { path, needed, got } => write!(
                f,
                "{}: truncated (needed {needed} bytes, got {got})",
                path.display()
            ),
            IoError::TrailingBytes { path, extra } => {
                write!(f, "{}: {extra} unexpected trailing bytes", path.display())
            }
            IoError::Manifest { path, message } => {
                write!(f, "{}: {message}", path.display())
            }
            IoError::Json { path, message } => write!(f, "{}: {message}", path.display()),
            IoError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for IoError {}

impl From<TensorError> for IoError {
    fn from(e: TensorError) -> IoError {
        IoError::Tensor(e)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a matrix as a MATX file.
pub fn write_matx(m: &Matrix, path: &Path) -> Result<(), IoError> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + m.data().len() * 8 + 4);
    bytes.extend_from_slice(&MATX_MAGIC);
    bytes.extend_from_slice(&MATX_VERSION.to_le_bytes());
    bytes.push(MATX_DTYPE_F64);
    bytes.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    let payload_start = bytes.len();
    for &v in m.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&bytes[payload_start..]);
    bytes.extend_from_slice(&crc.to_le_bytes());

    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&bytes).map_err(io_err(path))?;
    Ok(())
}

/// Reads a MATX file, validating magic, version, dtype code, exact length,
/// and the payload CRC.
pub fn read_matx(path: &Path) -> Result<Matrix, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < HEADER_LEN {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            needed: HEADER_LEN,
            got: bytes.len(),
        });
    }
    if bytes[0..4] != MATX_MAGIC {
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MATX_VERSION {
        return Err(IoError::BadVersion {
            path: path.to_path_buf(),
            got: version,
        });
    }
    let dtype = bytes[6];
    if dtype != MATX_DTYPE_F64 {
        return Err(IoError::BadDtype {
            path: path.to_path_buf(),
            got: dtype,
        });
    }
    let rows = u64::from_le_bytes(bytes[7..15].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[15..23].try_into().unwrap()) as usize;
    let payload_len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| IoError::Manifest {
            path: path.to_path_buf(),
            message: "matrix dimensions overflow".to_string(),
        })?;
    let total = HEADER_LEN + payload_len + 4;
    if bytes.len() < total {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            needed: total,
            got: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(IoError::TrailingBytes {
            path: path.to_path_buf(),
            extra: bytes.len() - total,
        });
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored_crc = u32::from_le_bytes(bytes[total - 4..].try_into().unwrap());
    let crc = crc32fast::hash(payload);
    if crc != stored_crc {
        return Err(IoError::CrcMismatch {
            path: path.to_path_buf(),
            expected: stored_crc,
            got: crc,
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut m = Matrix::zeros(rows, cols);
    m.data_mut().copy_from_slice(&data);
    Ok(m)
}

/// A four-axis convolution filter `(C_out, C_in, H, S)` stored flat with
/// `c_out` slowest, then `c_in`, then `h`, then `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilter {
    pub c_out: usize,
    pub c_in: usize,
    pub h: usize,
    pub s: usize,
    data: Vec<f64>,
}

impl ConvFilter {
    pub fn new(
        c_out: usize,
        c_in: usize,
        h: usize,
        s: usize,
        data: Vec<f64>,
    ) -> Result<ConvFilter, TensorError> {
        if c_out == 0 || c_in == 0 || h == 0 || s == 0 {
            return Err(TensorError::Empty {
                what: "conv filter axes",
            });
        }
        let expected = c_out * c_in * h * s;
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(ConvFilter {
            c_out,
            c_in,
            h,
            s,
            data,
        })
    }

    pub fn from_fn(
        c_out: usize,
        c_in: usize,
        h: usize,
        s: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> ConvFilter {
        let mut data = Vec::with_capacity(c_out * c_in * h * s);
        for o in 0..c_out {
            for i in 0..c_in {
                for hh in 0..h {
                    for ss in 0..s {
                        data.push(f(o, i, hh, ss));
                    }
                }
            }
        }
        ConvFilter {
            c_out,
            c_in,
            h,
            s,
            data,
        }
    }

    pub fn get(&self, o: usize, i: usize, hh: usize, ss: usize) -> f64 {
        self.data[((o * self.c_in + i) * self.h + hh) * self.s + ss]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The filter as a `C_out x (C_in*H*S)` matrix in raw storage order.
    fn as_raw_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.c_out, self.c_in * self.h * self.s);
        m.data_mut().copy_from_slice(&self.data);
        m
    }
}

/// Reshapes a conv filter to its 2-D form: `(S*H*C_in) x C_out`, row index
/// enumerating `(c_in, h, s)` with `c_in` slowest, column index `c_out`.
///
/// With the raw storage order above this is exactly the transpose of the
/// `C_out x (C_in*H*S)` raw matrix, so reshape and its inverse are bit-exact.
pub fn conv_reshape(filter: &ConvFilter) -> Matrix {
    filter.as_raw_matrix().transpose()
}

/// Inverse of [`conv_reshape`]: restores the four-axis filter exactly.
pub fn conv_unshape(
    m: &Matrix,
    c_out: usize,
    c_in: usize,
    h: usize,
    s: usize,
) -> Result<ConvFilter, TensorError> {
    if m.rows() != s * h * c_in || m.cols() != c_out {
        return Err(TensorError::ShapeMismatch {
            op: "conv_unshape",
            left: m.shape(),
            right: (s * h * c_in, c_out),
        });
    }
    let raw = m.transpose();
    ConvFilter::new(c_out, c_in, h, s, raw.data().to_vec())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    kind: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    layers: Vec<ManifestEntry>,
}

fn sanitize_file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Saves OR-eligible layers (linear and conv weights) as a checkpoint bundle:
/// `manifest.json` plus one MATX file per layer, in manifest order.
pub fn save_bundle(dir: &Path, layers: &[LayerSpec]) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(layers.len());
    for (index, layer) in layers.iter().enumerate() {
        let file = format!("{:03}_{}.matx", index, sanitize_file_stem(&layer.name));
        let (kind, stored) = match layer.kind {
            LayerKind::Linear => ("linear", layer.weight.clone()),
            // Conv weights are stored in raw order: C_out x (C_in*H*S).
            LayerKind::Conv => ("conv", layer.weight.transpose()),
            other => {
                return Err(IoError::Manifest {
                    path: dir.join("manifest.json"),
                    message: format!(
                        "layer '{}' has kind '{}' which bundles do not carry",
                        layer.name,
                        other.as_str()
                    ),
                })
            }
        };
        write_matx(&stored, &dir.join(&file))?;
        entries.push(ManifestEntry {
            name: layer.name.clone(),
            kind: kind.to_string(),
            shape: layer.raw_shape.clone(),
            file,
        });
    }
    let manifest = Manifest { layers: entries };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(())
}

/// Loads a checkpoint bundle; manifest order defines layer order.
pub fn load_bundle(dir: &Path) -> Result<Vec<LayerSpec>, IoError> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| IoError::Manifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let stored = read_matx(&dir.join(&entry.file))?;
        let layer = match entry.kind.as_str() {
            "linear" => {
                if entry.shape != vec![stored.rows(), stored.cols()] {
                    return Err(IoError::Manifest {
                        path: manifest_path.clone(),
                        message: format!(
                            "layer '{}': shape {:?} does not match stored {}x{}",
                            entry.name,
                            entry.shape,
                            stored.rows(),
                            stored.cols()
                        ),
                    });
                }
                LayerSpec::linear(entry.name.clone(), stored)?
            }
            "conv" => {
                let [c_out, c_in, h, s] = entry.shape[..] else {
                    return Err(IoError::Manifest {
                        path: manifest_path.clone(),
                        message: format!(
                            "layer '{}': conv shape must have four axes, got {:?}",
                            entry.name, entry.shape
                        ),
                    });
                };
                if stored.rows() != c_out || stored.cols() != c_in * h * s {
                    return Err(IoError::Manifest {
                        path: manifest_path.clone(),
                        message: format!(
                            "layer '{}': stored {}x{} does not match conv shape {:?}",
                            entry.name,
                            stored.rows(),
                            stored.cols(),
                            entry.shape
                        ),
                    });
                }
                LayerSpec::conv(entry.name.clone(), c_out, c_in, h, s, stored.transpose())?
            }
            other => {
                return Err(IoError::Manifest {
                    path: manifest_path.clone(),
                    message: format!("layer '{}': unknown kind '{other}'", entry.name),
                })
            }
        };
        layers.push(layer);
    }
    Ok(layers)
}

/// Report serialization format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<ReportFormat> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }
}

/// CSV rendering of a collapse report: one row per eigenvalue, columns
/// `stage,index,raw,normalized,nonpositive_flag`, stages in report order.
pub fn report_to_csv(report: &CollapseReport) -> String {
    let mut out = String::from("stage,index,raw,normalized,nonpositive_flag\n");
    for stage in report.stages() {
        let spectrum = &stage.spectrum;
        for (index, (&raw, &normalized)) in
            spectrum.raw.iter().zip(&spectrum.normalized).enumerate()
        {
            let flag = if raw <= 0.0 { 1 } else { 0 };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                spectrum.source, index, raw, normalized, flag
            ));
        }
    }
    out
}

pub fn report_to_json(report: &CollapseReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

/// Writes a collapse report in the requested format.
pub fn export_report(
    report: &CollapseReport,
    format: ReportFormat,
    path: &Path,
) -> Result<(), IoError> {
    let text = match format {
        ReportFormat::Csv => report_to_csv(report),
        ReportFormat::Json => report_to_json(report),
    };
    fs::write(path, text).map_err(io_err(path))?;
    Ok(())
}

/// Reads back a JSON collapse report.
pub fn import_report_json(path: &Path) -> Result<CollapseReport, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes a plain numeric grid as CSV (used for correlation matrices).
pub fn write_matrix_csv(m: &Matrix, path: &Path) -> Result<(), IoError> {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reg::{or_loss, so_loss, RegKind, RegularizerConfig};
    use crate::rng::{mix_seed, normal_matrix};
    use crate::spectra::{collapse_report, CollapseOptions};

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("orthoreg_io_{tag}_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn matx_roundtrip_is_bit_exact() {
        let dir = tmp_dir("roundtrip");
        let m = normal_matrix(7, 5, 42);
        let path = dir.join("m.matx");
        write_matx(&m, &path).unwrap();
        let back = read_matx(&path).unwrap();
        assert_eq!(m.data(), back.data());
        assert_eq!(m.shape(), back.shape());
    }

    #[test]
    fn matx_zero_by_zero_is_valid() {
        let dir = tmp_dir("empty");
        let m = Matrix::zeros(0, 0);
        let path = dir.join("z.matx");
        write_matx(&m, &path).unwrap();
        let back = read_matx(&path).unwrap();
        assert_eq!(back.shape(), (0, 0));
    }

    #[test]
    fn matx_detects_corruption_and_format_errors() {
        let dir = tmp_dir("corrupt");
        let m = normal_matrix(4, 4, 7);
        let path = dir.join("c.matx");
        write_matx(&m, &path).unwrap();
        let good = fs::read(&path).unwrap();

        // Flip one payload byte: CRC error.
        let mut bad = good.clone();
        bad[HEADER_LEN + 3] ^= 0x40;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_matx(&path), Err(IoError::CrcMismatch { .. })));

        // Bad magic.
        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_matx(&path), Err(IoError::BadMagic { .. })));

        // Bad version.
        let mut bad = good.clone();
        bad[4] = 9;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_matx(&path),
            Err(IoError::BadVersion { got: 9, .. })
        ));

        // Bad dtype.
        let mut bad = good.clone();
        bad[6] = 2;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_matx(&path),
            Err(IoError::BadDtype { got: 2, .. })
        ));

        // Truncation.
        fs::write(&path, &good[..good.len() - 5]).unwrap();
        assert!(matches!(read_matx(&path), Err(IoError::Truncated { .. })));

        // Trailing bytes.
        let mut bad = good.clone();
        bad.push(0);
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_matx(&path),
            Err(IoError::TrailingBytes { extra: 1, .. })
        ));
    }

    #[test]
    fn conv_reshape_examples() {
        let f = ConvFilter::new(1, 1, 1, 1, vec![3.5]).unwrap();
        let m = conv_reshape(&f);
        assert_eq!(m.shape(), (1, 1));
        assert_eq!(m.get(0, 0), 3.5);

        let f = ConvFilter::new(2, 1, 1, 1, vec![1.0, 2.0]).unwrap();
        let m = conv_reshape(&f);
        assert_eq!(m.shape(), (1, 2));
        assert_eq!((m.get(0, 0), m.get(0, 1)), (1.0, 2.0));
    }

    #[test]
    fn conv_reshape_row_order_is_cin_slowest() {
        let f = ConvFilter::from_fn(2, 3, 2, 2, |o, i, hh, ss| {
            (o * 1000 + i * 100 + hh * 10 + ss) as f64
        });
        let m = conv_reshape(&f);
        assert_eq!(m.shape(), (12, 2));
        for o in 0..2 {
            for i in 0..3 {
                for hh in 0..2 {
                    for ss in 0..2 {
                        let row = (i * 2 + hh) * 2 + ss;
                        assert_eq!(m.get(row, o), f.get(o, i, hh, ss));
                    }
                }
            }
        }
    }

    #[test]
    fn conv_reshape_inverse_is_identity() {
        let f = ConvFilter::new(3, 2, 2, 2, normal_matrix(1, 24, 5).data().to_vec()).unwrap();
        let m = conv_reshape(&f);
        let back = conv_unshape(&m, 3, 2, 2, 2).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn conv_reshape_so_loss_matches_flatten_oracle() {
        // Independent oracle: build the Gram matrix directly from flattened
        // per-output-filter vectors and sum squared deviations from identity.
        let f = ConvFilter::new(3, 2, 2, 2, normal_matrix(1, 24, 9).data().to_vec()).unwrap();
        let m = conv_reshape(&f);
        assert_eq!(m.shape(), (8, 3));

        let flat: Vec<Vec<f64>> = (0..3)
            .map(|o| {
                let mut v = Vec::new();
                for i in 0..2 {
                    for hh in 0..2 {
                        for ss in 0..2 {
                            v.push(f.get(o, i, hh, ss));
                        }
                    }
                }
                v
            })
            .collect();
        let mut oracle = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = flat[a].iter().zip(&flat[b]).map(|(x, y)| x * y).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                oracle += (dot - target) * (dot - target);
            }
        }
        assert!((so_loss(&m) - oracle).abs() < 1e-9);
    }

    #[test]
    fn bundle_roundtrip_preserves_order_and_or_loss_bits() {
        let dir = tmp_dir("bundle");
        let layers = vec![
            LayerSpec::linear("enc.block1", normal_matrix(6, 4, 1)).unwrap(),
            LayerSpec::conv("enc.conv", 3, 2, 2, 2, normal_matrix(8, 3, 2)).unwrap(),
            LayerSpec::linear("enc.block2", normal_matrix(4, 2, 3)).unwrap(),
        ];
        save_bundle(&dir, &layers).unwrap();
        let loaded = load_bundle(&dir).unwrap();
        assert_eq!(loaded.len(), 3);
        for (a, b) in layers.iter().zip(&loaded) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.raw_shape, b.raw_shape);
            assert_eq!(a.weight.data(), b.weight.data());
        }
        let cfg = RegularizerConfig::new(RegKind::So);
        let before = or_loss(&layers, &cfg);
        let after = or_loss(&loaded, &cfg);
        assert_eq!(before.to_bits(), after.to_bits());
    }

    #[test]
    fn bundle_rejects_non_weight_layers() {
        let dir = tmp_dir("badkind");
        let layers = vec![LayerSpec::bias("b", normal_matrix(1, 3, 1))];
        assert!(matches!(
            save_bundle(&dir, &layers),
            Err(IoError::Manifest { .. })
        ));
    }

    #[test]
    fn report_roundtrip_and_csv_schema() {
        let layers = vec![LayerSpec::linear("w0", normal_matrix(10, 4, 3)).unwrap()];
        let stages = vec![
            ("input".to_string(), normal_matrix(20, 5, 4)),
            ("representations".to_string(), normal_matrix(20, 3, 5)),
        ];
        let report = collapse_report(&layers, &stages, &CollapseOptions::default());

        let dir = tmp_dir("report");
        let json_path = dir.join("report.json");
        export_report(&report, ReportFormat::Json, &json_path).unwrap();
        let back = import_report_json(&json_path).unwrap();
        assert_eq!(report, back);

        let csv = report_to_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "stage,index,raw,normalized,nonpositive_flag"
        );
        let expected_rows: usize = report.stages().map(|s| s.spectrum.raw.len()).sum();
        assert_eq!(lines.count(), expected_rows);
        // Row count equals the sum of spectrum dims over stages.
        let dim_sum: usize = report.stages().map(|s| s.spectrum.dim).sum();
        assert_eq!(expected_rows, dim_sum);
    }

    #[test]
    fn empty_report_is_header_only() {
        let report = collapse_report(&[], &[], &CollapseOptions::default());
        let csv = report_to_csv(&report);
        assert_eq!(csv, "stage,index,raw,normalized,nonpositive_flag\n");
    }

    #[test]
    fn matx_roundtrip_many_random_shapes() {
        let dir = tmp_dir("shapes");
        for seed in 0..40u64 {
            let rows = (mix_seed(seed, &[1]) % 9) as usize;
            let cols = (mix_seed(seed, &[2]) % 9) as usize;
            let m = normal_matrix(rows.max(1), cols.max(1), seed);
            let path = dir.join(format!("s{seed}.matx"));
            write_matx(&m, &path).unwrap();
            let back = read_matx(&path).unwrap();
            assert_eq!(m.data(), back.data());
        }
    }
}
