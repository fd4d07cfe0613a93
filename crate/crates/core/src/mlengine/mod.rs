//! Latency-budgeted model selection.
//!
//! [`train`] evaluates every candidate configuration with k-fold
//! cross-validation on the dataset's fold map (restricted to the training
//! portion), refits each candidate on the full training portion, scores the
//! refit on the chronologically last 20% of rows, measures p99 single-sample
//! latency, and returns the best candidate that fits the latency target.

pub mod artifact;
pub mod gbdt;
pub mod metrics;
pub mod mlp;
pub mod tree;

use std::collections::BTreeSet;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curation::{FeatureVector, LabeledDataset, FEATURE_NAMES};
pub use artifact::{export_artifact, file_sha256, load_artifact};
pub use gbdt::{train_gbdt, Gbdt};
pub use metrics::Confusion;
pub use mlp::{train_logistic, train_mlp, Mlp, MlpParams};
pub use tree::{train_decision_tree, Tree, TreeNode};

pub const HOLDOUT_FRACTION: f64 = 0.2;
pub const DEFAULT_LATENCY_SAMPLES: usize = 10_000;
pub const MIN_LATENCY_SAMPLES: usize = 1_000;
pub const LATENCY_WARMUP: usize = 100;
pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum MlError {
    #[error("dataset has a single class; a classifier cannot be trained")]
    SingleClass,
    #[error("dataset too small: {0}")]
    TooSmall(String),
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("invalid latency budget {0} ms")]
    InvalidBudget(f64),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("no candidate meets the {budget_ms} ms latency budget ({})", fmt_latencies(.latencies))]
    BudgetInfeasible { budget_ms: f64, latencies: Vec<(String, f64)> },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("feature schema mismatch: model expects {expected:?}, got {got:?}")]
    SchemaMismatch { expected: Vec<String>, got: Vec<String> },
    #[error("latency measurement needs at least {MIN_LATENCY_SAMPLES} samples, got {0}")]
    TooFewLatencySamples(usize),
    #[error("artifact checksum error: {0}")]
    Checksum(String),
    #[error("artifact format version {found} is not supported (expected {supported})")]
    Version { found: u16, supported: u16 },
    #[error("malformed artifact: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_latencies(l: &[(String, f64)]) -> String {
    l.iter().map(|(name, us)| format!("{name}: {us:.1} us")).collect::<Vec<_>>().join(", ")
}

/// Row-major feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub n_features: usize,
    pub x: Vec<f64>,
    pub y: Vec<bool>,
}

impl Samples {
    pub fn new(n_features: usize, x: Vec<f64>, y: Vec<bool>) -> Self {
        assert!(n_features > 0 && x.len() == n_features * y.len(), "feature matrix shape");
        Samples { n_features, x, y }
    }

    pub fn from_dataset(ds: &LabeledDataset, rows: &[usize]) -> Self {
        let mut x = Vec::with_capacity(rows.len() * FEATURE_NAMES.len());
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend(ds.rows[r].features.values());
            y.push(ds.rows[r].label);
        }
        Samples::new(FEATURE_NAMES.len(), x, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn value(&self, i: usize, f: usize) -> f64 {
        self.x[i * self.n_features + f]
    }

    pub fn subset(&self, rows: &[usize]) -> Samples {
        let x = rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Samples::new(self.n_features, x, rows.iter().map(|&r| self.y[r]).collect())
    }

    pub fn has_both_classes(&self) -> bool {
        self.y.iter().any(|&v| v) && self.y.iter().any(|&v| !v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    DecisionTree,
    Gbdt,
    CompactMlp,
    Logistic,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::DecisionTree, Algorithm::Gbdt, Algorithm::CompactMlp, Algorithm::Logistic];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::DecisionTree => "decision_tree",
            Algorithm::Gbdt => "gbdt",
            Algorithm::CompactMlp => "compact_mlp",
            Algorithm::Logistic => "logistic",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        Algorithm::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningTask {
    #[default]
    BinaryClassification,
}

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum CandidateConfig {
    DecisionTree { max_depth: usize, min_leaf: usize },
    Gbdt { n_trees: usize, depth: usize, learning_rate: f64, min_leaf: usize },
    CompactMlp { hidden: Vec<usize>, epochs: usize, learning_rate: f64 },
    Logistic { epochs: usize, learning_rate: f64 },
}

impl CandidateConfig {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            CandidateConfig::DecisionTree { .. } => Algorithm::DecisionTree,
            CandidateConfig::Gbdt { .. } => Algorithm::Gbdt,
            CandidateConfig::CompactMlp { .. } => Algorithm::CompactMlp,
            CandidateConfig::Logistic { .. } => Algorithm::Logistic,
        }
    }

    /// Rough model-size proxy used to prune candidates on retries.
    pub fn capacity(&self) -> usize {
        match self {
            CandidateConfig::DecisionTree { max_depth, .. } => 1 << max_depth,
            CandidateConfig::Gbdt { n_trees, depth, .. } => n_trees << depth,
            CandidateConfig::CompactMlp { hidden, .. } => hidden.iter().product::<usize>() * hidden.len(),
            CandidateConfig::Logistic { .. } => 1,
        }
    }

    pub fn label(&self) -> String {
        match self {
            CandidateConfig::DecisionTree { max_depth, min_leaf } => {
                format!("decision_tree(max_depth={max_depth},min_leaf={min_leaf})")
            }
            CandidateConfig::Gbdt { n_trees, depth, learning_rate, min_leaf } => {
                format!("gbdt(n_trees={n_trees},depth={depth},lr={learning_rate},min_leaf={min_leaf})")
            }
            CandidateConfig::CompactMlp { hidden, epochs, learning_rate } => {
                let h = hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("x");
                format!("compact_mlp(hidden={h},epochs={epochs},lr={learning_rate})")
            }
            CandidateConfig::Logistic { epochs, learning_rate } => format!("logistic(epochs={epochs},lr={learning_rate})"),
        }
    }

    pub fn fit(&self, samples: &Samples, seed: u64) -> Result<Model, MlError> {
        Ok(match self {
            CandidateConfig::DecisionTree { max_depth, min_leaf } => {
                Model::DecisionTree(train_decision_tree(samples, *max_depth, *min_leaf))
            }
            CandidateConfig::Gbdt { n_trees, depth, learning_rate, min_leaf } => {
                Model::Gbdt(train_gbdt(samples, *n_trees, *depth, *learning_rate, *min_leaf).model)
            }
            CandidateConfig::CompactMlp { hidden, epochs, learning_rate } => Model::CompactMlp(
                train_mlp(samples, hidden, MlpParams { epochs: *epochs, learning_rate: *learning_rate, seed })?.model,
            ),
            CandidateConfig::Logistic { epochs, learning_rate } => Model::Logistic(
                train_logistic(samples, MlpParams { epochs: *epochs, learning_rate: *learning_rate, seed })?.model,
            ),
        })
    }
}

/// The fixed search grid, in evaluation order.
pub fn default_grid() -> Vec<CandidateConfig> {
    let mut grid = Vec::new();
    for max_depth in [3, 5, 8] {
        grid.push(CandidateConfig::DecisionTree { max_depth, min_leaf: 5 });
    }
    for n_trees in [20, 50] {
        for depth in [2, 3] {
            for learning_rate in [0.1, 0.3] {
                grid.push(CandidateConfig::Gbdt { n_trees, depth, learning_rate, min_leaf: 5 });
            }
        }
    }
    for h in [8, 16] {
        grid.push(CandidateConfig::CompactMlp { hidden: vec![h], epochs: 150, learning_rate: 1.0 });
    }
    grid.push(CandidateConfig::Logistic { epochs: 150, learning_rate: 1.0 });
    grid
}

/// Trained model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    DecisionTree(Tree),
    Gbdt(Gbdt),
    CompactMlp(Mlp),
    Logistic(Mlp),
    /// Fixed output, used by probes and tests.
    Constant { score: f64 },
}

impl Model {
    /// Positive-class probability.
    pub fn score(&self, x: &[f64]) -> f64 {
        match self {
            Model::DecisionTree(t) => t.eval(x),
            Model::Gbdt(g) => g.score(x),
            Model::CompactMlp(m) | Model::Logistic(m) => m.score(x),
            Model::Constant { score } => *score,
        }
    }

    /// Structural checks for parameters read from disk.
    pub fn validate(&self, n_features: usize) -> Result<(), MlError> {
        let bad = |m: String| Err(MlError::Format(m));
        let check_tree = |t: &Tree| -> Result<(), MlError> {
            if t.nodes.is_empty() {
                return bad("empty tree".into());
            }
            for (i, node) in t.nodes.iter().enumerate() {
                if let TreeNode::Split { feature, threshold, left, right } = node {
                    let (l, r) = (*left as usize, *right as usize);
                    if *feature as usize >= n_features || !threshold.is_finite() {
                        return bad(format!("node {i}: bad split"));
                    }
                    // Children follow their parent (pre-order), which rules out cycles.
                    if l <= i || r <= i || l >= t.nodes.len() || r >= t.nodes.len() {
                        return bad(format!("node {i}: child index out of range"));
                    }
                }
            }
            Ok(())
        };
        let check_mlp = |m: &Mlp, logistic: bool| -> Result<(), MlError> {
            if m.scaler.mean.len() != n_features || m.scaler.scale.len() != n_features {
                return bad("scaler width".into());
            }
            if logistic != (m.layers.len() == 1) || m.layers.is_empty() || m.layers.len() > mlp::MAX_HIDDEN_LAYERS + 1 {
                return bad("layer count".into());
            }
            let mut width = n_features;
            for l in &m.layers {
                if l.inputs != width || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                    return bad("layer shape".into());
                }
                width = l.outputs;
            }
            if width != 1 {
                return bad("output width".into());
            }
            Ok(())
        };
        match self {
            Model::DecisionTree(t) => check_tree(t),
            Model::Gbdt(g) => g.trees.iter().try_for_each(check_tree),
            Model::CompactMlp(m) => check_mlp(m, false),
            Model::Logistic(m) => check_mlp(m, true),
            Model::Constant { score } if (0.0..=1.0).contains(score) => Ok(()),
            Model::Constant { .. } => bad("constant score outside [0, 1]".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub accuracy: f64,
    pub f1_macro: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub algorithm: Algorithm,
    pub label: String,
    pub hyperparams: CandidateConfig,
    pub cv_accuracy: f64,
    pub cv_f1_macro: f64,
    pub per_fold: Vec<FoldMetrics>,
    pub holdout_accuracy: f64,
    pub holdout_f1_macro: f64,
    pub measured_latency_us_p99: f64,
    pub artifact_size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub algorithm: Algorithm,
    pub hyperparams: CandidateConfig,
    /// Held-out accuracy and macro F1 against the dataset labels.
    pub accuracy: f64,
    pub f1_macro: f64,
    pub confusion: Confusion,
    pub cv_accuracy: f64,
    pub cv_f1_macro: f64,
    pub per_fold: Vec<FoldMetrics>,
    /// First held-out row; held-out rows run to the end of the dataset.
    pub holdout_start_row: usize,
    pub holdout_labels: String,
    pub holdout_predictions: String,
    /// Measured at selection time; never written into the artifact file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_us_p99: Option<f64>,
    pub size_bytes: u64,
    pub dataset_provenance: String,
    pub seed: u64,
}

impl ValidationReport {
    /// `(accuracy, f1_macro, confusion)` recomputed from the stored labels
    /// and predictions.
    pub fn recompute(&self) -> Option<(f64, f64, Confusion)> {
        let y = metrics::decode_bits(&self.holdout_labels)?;
        let p = metrics::decode_bits(&self.holdout_predictions)?;
        if y.len() != p.len() {
            return None;
        }
        let c = metrics::confusion(&y, &p);
        Some((c.accuracy(), c.f1_macro(), c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u16,
    pub algorithm: Algorithm,
    pub feature_schema: Vec<String>,
    /// Telemetry intervals per feature window the model was trained on.
    pub window_len: usize,
    pub threshold: f64,
    pub model: Model,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: bool,
    pub score: f64,
}

impl ModelArtifact {
    pub fn predict_values(&self, x: &[f64]) -> Result<Prediction, MlError> {
        if x.len() != self.feature_schema.len() {
            return Err(MlError::SchemaMismatch {
                expected: self.feature_schema.clone(),
                got: (0..x.len()).map(|i| format!("x{i}")).collect(),
            });
        }
        let score = self.model.score(x);
        Ok(Prediction { label: score > self.threshold, score })
    }

    /// A single-leaf tree that always scores `score`, with an empty
    /// validation report. Used to probe the control loop and the file format.
    pub fn constant(score: f64, window_len: usize) -> Self {
        let mut artifact = ModelArtifact {
            format_version: artifact::FORMAT_VERSION,
            algorithm: Algorithm::DecisionTree,
            feature_schema: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            window_len,
            threshold: DEFAULT_DECISION_THRESHOLD,
            model: Model::DecisionTree(tree::Tree { nodes: vec![tree::TreeNode::Leaf { value: score }] }),
            report: ValidationReport {
                algorithm: Algorithm::DecisionTree,
                hyperparams: CandidateConfig::DecisionTree { max_depth: 0, min_leaf: 1 },
                accuracy: 0.0,
                f1_macro: 0.0,
                confusion: Confusion::default(),
                cv_accuracy: 0.0,
                cv_f1_macro: 0.0,
                per_fold: Vec::new(),
                holdout_start_row: 0,
                holdout_labels: String::new(),
                holdout_predictions: String::new(),
                latency_us_p99: None,
                size_bytes: 0,
                dataset_provenance: String::new(),
                seed: 0,
            },
        };
        artifact::to_bytes(&mut artifact);
        artifact
    }

    /// Round-trip through the file encoding; returns the file bytes.
    pub fn to_bytes(&mut self) -> Vec<u8> {
        artifact::to_bytes(self)
    }
}

/// Score one feature vector. Fails unless the artifact was trained on the
/// standard four-feature schema.
pub fn predict(artifact: &ModelArtifact, fv: &FeatureVector) -> Result<Prediction, MlError> {
    if artifact.feature_schema.iter().map(String::as_str).ne(FEATURE_NAMES) {
        return Err(MlError::SchemaMismatch {
            expected: artifact.feature_schema.clone(),
            got: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        });
    }
    artifact.predict_values(&fv.values())
}

/// Source of p99 latency measurements. Tests substitute deterministic or
/// artificially slowed probes.
pub trait LatencyProbe: Sync {
    fn p99_us(&self, artifact: &ModelArtifact, n_samples: usize) -> Result<f64, MlError>;
}

/// Wall-clock measurement via [`measure_latency`].
#[derive(Debug, Default, Clone, Copy)]
pub struct WallClockProbe;

impl LatencyProbe for WallClockProbe {
    fn p99_us(&self, artifact: &ModelArtifact, n_samples: usize) -> Result<f64, MlError> {
        measure_latency(artifact, n_samples)
    }
}

/// p99 single-sample inference latency in microseconds over `n_samples`
/// seeded inputs; the first 100 timings are discarded as warm-up.
pub fn measure_latency(artifact: &ModelArtifact, n_samples: usize) -> Result<f64, MlError> {
    if n_samples < MIN_LATENCY_SAMPLES {
        return Err(MlError::TooFewLatencySamples(n_samples));
    }
    let d = artifact.feature_schema.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a7e);
    let inputs: Vec<f64> = (0..n_samples * d).map(|_| rng.random::<f64>()).collect();
    let mut timings = Vec::with_capacity(n_samples);
    for x in inputs.chunks_exact(d) {
        let start = Instant::now();
        black_box(artifact.predict_values(black_box(x))?);
        timings.push(start.elapsed().as_nanos() as f64 / 1_000.0);
    }
    let mut kept = timings.split_off(LATENCY_WARMUP);
    kept.sort_by(f64::total_cmp);
    Ok(percentile_nearest_rank(&kept, 0.99))
}

/// Nearest-rank percentile of sorted data.
pub fn percentile_nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub struct TrainRequest<'a> {
    pub dataset: &'a LabeledDataset,
    pub task: LearningTask,
    /// Candidates slower than this (p99) are not selected.
    pub latency_budget_ms: f64,
    pub seed: u64,
    pub candidate_set: BTreeSet<Algorithm>,
    /// Grid points considered (filtered by `candidate_set`).
    pub grid: Vec<CandidateConfig>,
    pub latency_samples: usize,
    pub parallel: bool,
}

impl<'a> TrainRequest<'a> {
    pub fn new(dataset: &'a LabeledDataset, latency_budget_ms: f64, seed: u64) -> Self {
        TrainRequest {
            dataset,
            task: LearningTask::BinaryClassification,
            latency_budget_ms,
            seed,
            candidate_set: Algorithm::ALL.into_iter().collect(),
            grid: default_grid(),
            latency_samples: DEFAULT_LATENCY_SAMPLES,
            parallel: true,
        }
    }

    pub fn candidates(&self) -> Vec<CandidateConfig> {
        self.grid.iter().filter(|c| self.candidate_set.contains(&c.algorithm())).cloned().collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub artifact: ModelArtifact,
    /// One entry per grid point, in grid order.
    pub candidates: Vec<CandidateResult>,
    pub winner: usize,
}

pub fn train(req: &TrainRequest) -> Result<ModelArtifact, MlError> {
    train_with_probe(req, &WallClockProbe).map(|out| out.artifact)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn job_seed(seed: u64, candidate: usize, fold: usize) -> u64 {
    splitmix(splitmix(seed ^ ((candidate as u64) << 32)) ^ fold as u64)
}

/// Rows `0..start` train, `start..n` are held out.
pub fn holdout_start(n_rows: usize) -> usize {
    n_rows - ((n_rows as f64 * HOLDOUT_FRACTION).round() as usize)
}

fn map_ordered<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

struct Refit {
    artifact: ModelArtifact,
    holdout_accuracy: f64,
    holdout_f1: f64,
}

pub fn train_with_probe(req: &TrainRequest, probe: &dyn LatencyProbe) -> Result<TrainOutput, MlError> {
    if !(req.latency_budget_ms > 0.0) || !req.latency_budget_ms.is_finite() {
        return Err(MlError::InvalidBudget(req.latency_budget_ms));
    }
    let grid = req.candidates();
    if grid.is_empty() {
        return Err(MlError::EmptyCandidateSet);
    }
    let ds = req.dataset;
    if ds.single_class {
        return Err(MlError::SingleClass);
    }
    let n = ds.rows.len();
    let start = holdout_start(n);
    if start < ds.n_folds * 2 || start == n {
        return Err(MlError::TooSmall(format!("{n} rows")));
    }
    let train_rows: Vec<usize> = (0..start).collect();
    let hold_rows: Vec<usize> = (start..n).collect();
    let train_all = Samples::from_dataset(ds, &train_rows);
    if !train_all.has_both_classes() {
        return Err(MlError::SingleClass);
    }
    let holdout = Samples::from_dataset(ds, &hold_rows);

    let jobs: Vec<(usize, usize)> =
        (0..grid.len()).flat_map(|c| (0..ds.n_folds).map(move |f| (c, f))).collect();
    let fold_results = map_ordered(&jobs, req.parallel, |&(c, fold)| -> Result<Option<FoldMetrics>, MlError> {
        let (tr, va): (Vec<usize>, Vec<usize>) =
            train_rows.iter().partition(|&&r| usize::from(ds.fold_of_row[r]) != fold);
        if va.is_empty() || tr.is_empty() {
            return Ok(None);
        }
        let model = grid[c].fit(&train_all.subset(&tr), job_seed(req.seed, c, fold))?;
        let val = train_all.subset(&va);
        let preds: Vec<bool> = (0..val.len()).map(|i| model.score(val.row(i)) > DEFAULT_DECISION_THRESHOLD).collect();
        let cm = metrics::confusion(&val.y, &preds);
        Ok(Some(FoldMetrics { fold, n_train: tr.len(), n_val: va.len(), accuracy: cm.accuracy(), f1_macro: cm.f1_macro() }))
    });
    let mut per_candidate: Vec<Vec<FoldMetrics>> = vec![Vec::new(); grid.len()];
    for (&(c, _), r) in jobs.iter().zip(fold_results) {
        if let Some(m) = r? {
            per_candidate[c].push(m);
        }
    }

    let indices: Vec<usize> = (0..grid.len()).collect();
    let refits = map_ordered(&indices, req.parallel, |&c| -> Result<Refit, MlError> {
        let model = grid[c].fit(&train_all, job_seed(req.seed, c, usize::MAX))?;
        let preds: Vec<bool> =
            (0..holdout.len()).map(|i| model.score(holdout.row(i)) > DEFAULT_DECISION_THRESHOLD).collect();
        let cm = metrics::confusion(&holdout.y, &preds);
        let folds = &per_candidate[c];
        let k = folds.len().max(1) as f64;
        let mut artifact = ModelArtifact {
            format_version: artifact::FORMAT_VERSION,
            algorithm: grid[c].algorithm(),
            feature_schema: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            window_len: ds.window_len,
            threshold: DEFAULT_DECISION_THRESHOLD,
            model,
            report: ValidationReport {
                algorithm: grid[c].algorithm(),
                hyperparams: grid[c].clone(),
                accuracy: cm.accuracy(),
                f1_macro: cm.f1_macro(),
                confusion: cm,
                cv_accuracy: folds.iter().map(|f| f.accuracy).sum::<f64>() / k,
                cv_f1_macro: folds.iter().map(|f| f.f1_macro).sum::<f64>() / k,
                per_fold: folds.clone(),
                holdout_start_row: start,
                holdout_labels: metrics::encode_bits(&holdout.y),
                holdout_predictions: metrics::encode_bits(&preds),
                latency_us_p99: None,
                size_bytes: 0,
                dataset_provenance: ds.provenance_hash(),
                seed: req.seed,
            },
        };
        artifact::to_bytes(&mut artifact);
        Ok(Refit { holdout_accuracy: cm.accuracy(), holdout_f1: cm.f1_macro(), artifact })
    });
    let refits = refits.into_iter().collect::<Result<Vec<_>, _>>()?;

    // Latency is measured sequentially so candidates do not compete for cores.
    let mut candidates = Vec::with_capacity(grid.len());
    for (c, refit) in refits.iter().enumerate() {
        let latency = probe.p99_us(&refit.artifact, req.latency_samples)?;
        let r = &refit.artifact.report;
        candidates.push(CandidateResult {
            algorithm: grid[c].algorithm(),
            label: grid[c].label(),
            hyperparams: grid[c].clone(),
            cv_accuracy: r.cv_accuracy,
            cv_f1_macro: r.cv_f1_macro,
            per_fold: r.per_fold.clone(),
            holdout_accuracy: refit.holdout_accuracy,
            holdout_f1_macro: refit.holdout_f1,
            measured_latency_us_p99: latency,
            artifact_size_bytes: r.size_bytes,
        });
    }

    let budget_us = req.latency_budget_ms * 1_000.0;
    let winner = rank_by_quality(&candidates)
        .into_iter()
        .find(|&c| candidates[c].measured_latency_us_p99 <= budget_us)
        .ok_or_else(|| MlError::BudgetInfeasible {
            budget_ms: req.latency_budget_ms,
            latencies: candidates.iter().map(|c| (c.label.clone(), c.measured_latency_us_p99)).collect(),
        })?;
    let mut artifact = refits.into_iter().nth(winner).expect("winner index").artifact;
    artifact.report.latency_us_p99 = Some(candidates[winner].measured_latency_us_p99);
    Ok(TrainOutput { artifact, candidates, winner })
}

/// Candidate indices by (cv F1 desc, artifact size asc, algorithm name,
/// grid position). Timing plays no part, so the order is reproducible;
/// the winner is the first entry that meets the latency target.
pub fn rank_by_quality(candidates: &[CandidateResult]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&candidates[a], &candidates[b]);
        y.cv_f1_macro
            .total_cmp(&x.cv_f1_macro)
            .then(x.artifact_size_bytes.cmp(&y.artifact_size_bytes))
            .then(x.algorithm.as_str().cmp(y.algorithm.as_str()))
            .then(a.cmp(&b))
    });
    order
}

/// Filter by budget, then order by (cv F1 desc, latency asc, size asc,
/// algorithm name).
pub fn select_winner(candidates: &[CandidateResult], budget_ms: f64) -> Result<&CandidateResult, MlError> {
    let budget_us = budget_ms * 1_000.0;
    candidates
        .iter()
        .filter(|c| c.measured_latency_us_p99 <= budget_us)
        .min_by(|x, y| {
            y.cv_f1_macro
                .total_cmp(&x.cv_f1_macro)
                .then(x.measured_latency_us_p99.total_cmp(&y.measured_latency_us_p99))
                .then(x.artifact_size_bytes.cmp(&y.artifact_size_bytes))
                .then(x.algorithm.as_str().cmp(y.algorithm.as_str()))
        })
        .ok_or_else(|| MlError::BudgetInfeasible {
            budget_ms,
            latencies: candidates.iter().map(|c| (c.label.clone(), c.measured_latency_us_p99)).collect(),
        })
}
