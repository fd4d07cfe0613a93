//! Telemetry trace + spec → windowed, labeled dataset.
//!
//! Features are computed over a trailing window of the aggregate utilization
//! series (fraction units). The raw label at `t` is `util[t] > threshold`;
//! the training label is "congested anywhere in `t..=t+horizon`". Intervals
//! without a full horizon are dropped.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::intent::{LabelRule, ProvisioningSpec};
use crate::telemetry::TelemetryTrace;

pub const FEATURE_NAMES: [&str; 4] = ["mean_prb", "std_prb", "min_prb", "slope_prb"];
pub const DATASET_HEADER: &str = "t_end,mean_prb,std_prb,min_prb,slope_prb,label";
pub const DEFAULT_WINDOW_LEN: usize = 10;
pub const DEFAULT_FOLDS: usize = 5;
/// Contiguous blocks per fold used when shuffling rows into folds.
const BLOCKS_PER_FOLD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub t_end: u32,
    pub mean_prb: f64,
    pub std_prb: f64,
    pub min_prb: f64,
    pub slope_prb: f64,
}

impl FeatureVector {
    pub fn values(&self) -> [f64; 4] {
        [self.mean_prb, self.std_prb, self.min_prb, self.slope_prb]
    }

    pub fn with_t_end(self, t_end: u32) -> Self {
        FeatureVector { t_end, ..self }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("window of length {0} is too short (need at least 2)")]
    WindowTooShort(usize),
    #[error("stride must be >= 1")]
    ZeroStride,
    #[error("trace of {intervals} intervals is too short for window {window} and horizon {horizon}")]
    TraceTooShort { intervals: usize, window: usize, horizon: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
}

/// Mean, population standard deviation, minimum, and least-squares slope
/// (per interval) of a utilization window. `t_end` is left at 0.
pub fn compute_features(window: &[f64]) -> Result<FeatureVector, CurationError> {
    let n = window.len();
    if n < 2 {
        return Err(CurationError::WindowTooShort(n));
    }
    let nf = n as f64;
    let min = window.iter().copied().fold(f64::INFINITY, f64::min);
    // Accumulate offsets from the minimum so that mean >= min holds exactly.
    let mean = min + window.iter().map(|x| x - min).sum::<f64>() / nf;
    let var = window.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / nf;
    let centre = (nf - 1.0) / 2.0;
    // sum over i of (i - centre)^2 = n (n^2 - 1) / 12
    let sxx = nf * (nf * nf - 1.0) / 12.0;
    let sxy: f64 = window.iter().enumerate().map(|(i, x)| (i as f64 - centre) * (x - mean)).sum();
    Ok(FeatureVector { t_end: 0, mean_prb: mean, std_prb: var.sqrt(), min_prb: min, slope_prb: sxy / sxx })
}

/// Per-interval labels of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLabels {
    /// `util[t] > threshold`, one per interval.
    pub raw: Vec<bool>,
    /// Congested within the horizon; `T - horizon` entries.
    pub horizon: Vec<bool>,
}

pub fn raw_labels(util: &[f64], threshold: f64) -> Vec<bool> {
    util.iter().map(|&u| u > threshold).collect()
}

/// `y[t] = any(raw[t..=t+horizon])`, defined for `t < len - horizon`.
pub fn horizon_labels(raw: &[bool], horizon: usize) -> Vec<bool> {
    if raw.len() <= horizon {
        return Vec::new();
    }
    (0..raw.len() - horizon).map(|t| raw[t..=t + horizon].iter().any(|&r| r)).collect()
}

pub fn label_series(util: &[f64], rule: &LabelRule) -> TraceLabels {
    let raw = raw_labels(util, rule.threshold_fraction);
    let horizon = horizon_labels(&raw, rule.horizon_intervals as usize);
    TraceLabels { raw, horizon }
}

pub fn label_trace(trace: &TelemetryTrace, spec: &ProvisioningSpec) -> TraceLabels {
    label_series(&trace.util, &spec.label_rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub features: FeatureVector,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub trace_seed: u64,
    pub spec_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub window_len: usize,
    pub stride: usize,
    pub label_rule: LabelRule,
    pub rows: Vec<DatasetRow>,
    pub n_folds: usize,
    pub fold_seed: u64,
    pub fold_of_row: Vec<u8>,
    pub provenance: Provenance,
    /// Only one class present; training rejects such datasets.
    pub single_class: bool,
}

impl LabeledDataset {
    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.label).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 64);
        out.push_str(DATASET_HEADER);
        out.push('\n');
        for r in &self.rows {
            let f = &r.features;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                f.t_end, f.mean_prb, f.std_prb, f.min_prb, f.slope_prb, u8::from(r.label)
            );
        }
        out
    }

    /// SHA-256 over the CSV rows and fold map; identifies the exact data a
    /// model was trained on.
    pub fn provenance_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.provenance.spec_hash.as_bytes());
        h.update(self.provenance.trace_seed.to_le_bytes());
        h.update(self.to_csv().as_bytes());
        h.update(&self.fold_of_row);
        hex::encode(h.finalize())
    }
}

/// Assign `n_rows` rows to `k` folds.
///
/// Rows are cut into `10 k` contiguous blocks, the blocks are shuffled with a
/// seeded permutation, and the shuffled sequence is dealt into `k` chunks
/// whose sizes differ by at most one.
pub fn assign_folds(n_rows: usize, k: usize, seed: u64) -> Vec<u8> {
    assert!(k >= 1 && k <= u8::MAX as usize);
    let n_blocks = (BLOCKS_PER_FOLD * k).min(n_rows.max(1));
    let bounds: Vec<usize> = (0..=n_blocks).map(|b| b * n_rows / n_blocks).collect();
    let mut order: Vec<usize> = (0..n_blocks).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0u8; n_rows];
    let mut pos = 0usize;
    for b in order {
        for row in bounds[b]..bounds[b + 1] {
            folds[row] = (pos * k / n_rows) as u8;
            pos += 1;
        }
    }
    folds
}

pub fn build_dataset(
    trace: &TelemetryTrace,
    spec: &ProvisioningSpec,
    window_len: usize,
    stride: usize,
    fold_seed: u64,
) -> Result<LabeledDataset, CurationError> {
    if window_len < 2 {
        return Err(CurationError::WindowTooShort(window_len));
    }
    if stride == 0 {
        return Err(CurationError::ZeroStride);
    }
    let labels = label_trace(trace, spec);
    let horizon = spec.label_rule.horizon_intervals as usize;
    let intervals = trace.util.len();
    if intervals < window_len + horizon {
        return Err(CurationError::TraceTooShort { intervals, window: window_len, horizon });
    }
    let rows: Vec<DatasetRow> = (window_len - 1..intervals - horizon)
        .step_by(stride)
        .map(|end| {
            let window = &trace.util[end + 1 - window_len..=end];
            let features = compute_features(window).expect("window_len >= 2").with_t_end(end as u32);
            DatasetRow { features, label: labels.horizon[end] }
        })
        .collect();
    let positives = rows.iter().filter(|r| r.label).count();
    let single_class = positives == 0 || positives == rows.len();
    Ok(LabeledDataset {
        window_len,
        stride,
        label_rule: spec.label_rule,
        fold_of_row: assign_folds(rows.len(), DEFAULT_FOLDS, fold_seed),
        rows,
        n_folds: DEFAULT_FOLDS,
        fold_seed,
        provenance: Provenance { trace_seed: trace.cell.seed, spec_hash: spec.spec_hash() },
        single_class,
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetSidecar {
    format: String,
    version: u32,
    spec_hash: String,
    trace_seed: u64,
    window_len: usize,
    stride: usize,
    label_rule: LabelRule,
    fold_seed: u64,
    n_folds: usize,
    single_class: bool,
    fold_map: Vec<u8>,
}

const DATASET_FORMAT: &str = "ricforge-dataset";

pub fn dataset_sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn io_err(path: &Path, source: std::io::Error) -> CurationError {
    CurationError::Io { path: path.display().to_string(), source }
}

pub fn write_dataset(ds: &LabeledDataset, path: &Path) -> Result<(), CurationError> {
    fs::write(path, ds.to_csv()).map_err(|e| io_err(path, e))?;
    let side = DatasetSidecar {
        format: DATASET_FORMAT.into(),
        version: 1,
        spec_hash: ds.provenance.spec_hash.clone(),
        trace_seed: ds.provenance.trace_seed,
        window_len: ds.window_len,
        stride: ds.stride,
        label_rule: ds.label_rule,
        fold_seed: ds.fold_seed,
        n_folds: ds.n_folds,
        single_class: ds.single_class,
        fold_map: ds.fold_of_row.clone(),
    };
    let side_path = dataset_sidecar_path(path);
    let mut json = serde_json::to_string(&side).expect("sidecar serializes");
    json.push('\n');
    fs::write(&side_path, json).map_err(|e| io_err(&side_path, e))
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset, CurationError> {
    let name = path.display().to_string();
    let perr = |line: usize, msg: String| CurationError::Parse { path: name.clone(), line, msg };
    let side_path = dataset_sidecar_path(path);
    let side_text = fs::read_to_string(&side_path)
        .map_err(|source| CurationError::Io { path: side_path.display().to_string(), source })?;
    let side: DatasetSidecar = serde_json::from_str(&side_text).map_err(|e| CurationError::Parse {
        path: side_path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if side.format != DATASET_FORMAT {
        return Err(perr(1, format!("unexpected sidecar format {}", side.format)));
    }
    let text = fs::read_to_string(path).map_err(|source| CurationError::Io { path: name.clone(), source })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == DATASET_HEADER => {}
        _ => return Err(perr(1, format!("expected header `{DATASET_HEADER}`"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(perr(i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let num = |k: usize| f[k].trim().parse::<f64>().map_err(|e| perr(i + 1, format!("field {k}: {e}")));
        let t_end = f[0].trim().parse::<u32>().map_err(|e| perr(i + 1, format!("t_end: {e}")))?;
        let label = match f[5].trim() {
            "0" => false,
            "1" => true,
            other => return Err(perr(i + 1, format!("label must be 0 or 1, got {other}"))),
        };
        rows.push(DatasetRow {
            features: FeatureVector { t_end, mean_prb: num(1)?, std_prb: num(2)?, min_prb: num(3)?, slope_prb: num(4)? },
            label,
        });
    }
    if rows.is_empty() {
        return Err(perr(1, "no rows".into()));
    }
    if side.fold_map.len() != rows.len() || side.fold_map.iter().any(|&f| usize::from(f) >= side.n_folds) {
        return Err(perr(1, "fold map does not match rows".into()));
    }
    Ok(LabeledDataset {
        window_len: side.window_len,
        stride: side.stride,
        label_rule: side.label_rule,
        rows,
        n_folds: side.n_folds,
        fold_seed: side.fold_seed,
        fold_of_row: side.fold_map,
        provenance: Provenance { trace_seed: side.trace_seed, spec_hash: side.spec_hash },
        single_class: side.single_class,
    })
}
