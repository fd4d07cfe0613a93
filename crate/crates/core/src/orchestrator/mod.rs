//! Provisioning workflow: intent → telemetry and dataset → model → live xApp.
//!
//! [`provision`] times each phase, writes every intermediate file into a
//! per-run directory, and leaves the registry untouched unless the whole
//! sequence succeeds.

pub mod retrain;

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::curation::{build_dataset, write_dataset, CurationError, DEFAULT_WINDOW_LEN};
use crate::intent::{validate_spec, ClarificationRequest, IntentBackend, IntentOutcome, IntentText, ProvisioningSpec, RemoteError, SpecError};
use crate::mlengine::{
    default_grid, export_artifact, file_sha256, Algorithm, CandidateConfig, CandidateResult, MlError, TrainRequest,
    ValidationReport, DEFAULT_LATENCY_SAMPLES,
};
use crate::ricsim::{baseline_threshold_xapp, run_closed_loop, RicError, RicHarness, RunConfig, RunMetrics, XAppHandle};
use crate::synthesis::{
    read_descriptor, register_xapp, render_xapp, validate_descriptor, write_descriptor, ModelLocation, SynthesisError,
    XAppDescriptor, XAppTemplate,
};
use crate::telemetry::{generate_trace, read_trace, write_trace, CellConfig, TelemetryError, TelemetryTrace, TraceReplay, UeProfile};

pub use retrain::{retrain_until_budget, retrain_with_probes, AttemptRecord, RetrainError, RetrainOutcome, TIGHTEN_FACTOR};

pub const TRACE_FILE: &str = "trace.csv";
pub const DATASET_FILE: &str = "dataset.csv";
pub const MODEL_FILE: &str = "model.ormdl";
pub const REPORT_FILE: &str = "report.json";
pub const DESCRIPTOR_FILE: &str = "descriptor.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_MAX_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    IntentParse,
    DataCuration,
    Training,
    Synthesis,
    Registration,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::IntentParse, Phase::DataCuration, Phase::Training, Phase::Synthesis, Phase::Registration];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::IntentParse => "intent_parse",
            Phase::DataCuration => "data_curation",
            Phase::Training => "training",
            Phase::Synthesis => "synthesis",
            Phase::Registration => "registration",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: Phase,
    pub wall_ms: f64,
    /// The intent backend paid a first-call initialization.
    pub cold: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum PhaseError {
    #[error(transparent)]
    Backend(#[from] RemoteError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Retrain(#[from] RetrainError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Ric(#[from] RicError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
}

#[derive(Debug, thiserror::Error)]
#[error("{phase} failed: {source}")]
pub struct ProvisionError {
    pub phase: Phase,
    #[source]
    pub source: PhaseError,
}

fn at<E: Into<PhaseError>>(phase: Phase) -> impl FnOnce(E) -> ProvisionError {
    move |e| ProvisionError { phase, source: e.into() }
}

fn io_err(path: &Path, source: std::io::Error) -> PhaseError {
    PhaseError::Io { path: path.display().to_string(), source }
}

/// Where telemetry comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    Simulate { cell: CellConfig, ues: Vec<UeProfile> },
    File(PathBuf),
}

impl TraceSource {
    pub fn default_scenario(seed: u64) -> Self {
        let (cell, ues) = crate::telemetry::default_scenario(seed);
        TraceSource::Simulate { cell, ues }
    }

    fn load(&self) -> Result<TelemetryTrace, TelemetryError> {
        match self {
            TraceSource::Simulate { cell, ues } => generate_trace(cell, ues),
            TraceSource::File(p) => read_trace(p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProvisionConfig {
    /// Runs are written to `out_dir/runs/<run id>/`.
    pub out_dir: PathBuf,
    /// Seeds the fold assignment and model training.
    pub seed: u64,
    pub window_len: usize,
    pub stride: usize,
    pub max_attempts: usize,
    pub latency_samples: usize,
    pub parallel: bool,
    pub grid: Vec<CandidateConfig>,
    pub candidate_set: BTreeSet<Algorithm>,
    /// Replace a live xApp with the same id instead of failing.
    pub replace: bool,
}

impl ProvisionConfig {
    pub fn new(out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        ProvisionConfig {
            out_dir: out_dir.into(),
            seed,
            window_len: DEFAULT_WINDOW_LEN,
            stride: 1,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            latency_samples: DEFAULT_LATENCY_SAMPLES,
            parallel: true,
            grid: default_grid(),
            candidate_set: Algorithm::ALL.into_iter().collect(),
            replace: true,
        }
    }
}

pub fn run_id(spec: &ProvisioningSpec, seed: u64) -> String {
    format!("{}-seed{seed}", &spec.spec_hash()[..12])
}

pub fn run_dir(out_dir: &Path, run_id: &str) -> PathBuf {
    out_dir.join("runs").join(run_id)
}

/// Everything written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub report: ValidationReport,
    pub winner: String,
    pub candidates: Vec<CandidateResult>,
    pub attempts: Vec<AttemptRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFiles {
    pub trace: String,
    pub dataset: String,
    pub model: String,
    pub report: String,
    pub descriptor: String,
}

/// Persisted summary of one provisioning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: String,
    pub backend: String,
    pub spec: ProvisioningSpec,
    pub spec_hash: String,
    pub trace_seed: u64,
    pub seed: u64,
    pub dataset_provenance: String,
    pub dataset_rows: usize,
    pub artifact_sha256: String,
    pub xapp_id: String,
    pub winner: String,
    pub retrain_attempts: usize,
    pub timings: Vec<PhaseTiming>,
    /// Wall clock from the start of intent parsing to the end of registration.
    pub total_wall_ms: f64,
    pub files: RunFiles,
}

#[derive(Debug, Clone)]
pub struct ProvisionResult {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub spec: ProvisioningSpec,
    pub dataset_provenance: String,
    pub artifact_path: PathBuf,
    pub artifact_sha256: String,
    pub training: TrainingReport,
    pub descriptor: XAppDescriptor,
    pub handle: Arc<XAppHandle>,
    pub timings: Vec<PhaseTiming>,
    /// Retries after the first training attempt.
    pub retrain_attempts: usize,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone)]
pub enum ProvisionOutcome {
    Provisioned(Box<ProvisionResult>),
    /// The intent was ambiguous; nothing was written or registered.
    Clarification(ClarificationRequest),
}

struct PhaseClock {
    timings: Vec<PhaseTiming>,
}

impl PhaseClock {
    fn time<T>(&mut self, phase: Phase, cold: impl FnOnce() -> bool, f: impl FnOnce() -> Result<T, ProvisionError>) -> Result<T, ProvisionError> {
        let start = Instant::now();
        let out = f();
        let wall_ms = start.elapsed().as_secs_f64() * 1_000.0;
        self.timings.push(PhaseTiming { phase, wall_ms, cold: cold() });
        out
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), PhaseError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Run the full workflow for one intent.
pub fn provision(
    intent: &str,
    backend: &mut dyn IntentBackend,
    source: &TraceSource,
    config: &ProvisionConfig,
    harness: &RicHarness,
) -> Result<ProvisionOutcome, ProvisionError> {
    let template = XAppTemplate::builtin();
    let mut clock = PhaseClock { timings: Vec::with_capacity(Phase::ALL.len()) };
    let started = Instant::now();

    let outcome = {
        let start = Instant::now();
        let parsed = IntentText::new(intent)
            .map_err(PhaseError::from)
            .and_then(|text| backend.parse(&text).map_err(PhaseError::from))
            .and_then(|outcome| match outcome {
                IntentOutcome::Spec(spec) => validate_spec(spec).map(IntentOutcome::Spec).map_err(PhaseError::from),
                clarify => Ok(clarify),
            });
        let wall_ms = start.elapsed().as_secs_f64() * 1_000.0;
        clock.timings.push(PhaseTiming { phase: Phase::IntentParse, wall_ms, cold: backend.last_call_was_cold() });
        parsed.map_err(|source| ProvisionError { phase: Phase::IntentParse, source })?
    };
    let spec = match outcome {
        IntentOutcome::Spec(spec) => spec,
        IntentOutcome::Clarify(req) => return Ok(ProvisionOutcome::Clarification(req)),
    };

    let id = run_id(&spec, config.seed);
    let dir = run_dir(&config.out_dir, &id);
    let never = || false;

    let (trace, dataset) = clock.time(Phase::DataCuration, never, || {
        let phase = Phase::DataCuration;
        let trace = source.load().map_err(at(phase))?;
        let dataset = build_dataset(&trace, &spec, config.window_len, config.stride, config.seed).map_err(at(phase))?;
        std::fs::create_dir_all(&dir).map_err(|e| at::<PhaseError>(phase)(io_err(&dir, e)))?;
        write_trace(&trace, &dir.join(TRACE_FILE)).map_err(at(phase))?;
        write_dataset(&dataset, &dir.join(DATASET_FILE)).map_err(at(phase))?;
        Ok((trace, dataset))
    })?;

    let model_path = dir.join(MODEL_FILE);
    let (artifact, training, checksum) = clock.time(Phase::Training, never, || {
        let phase = Phase::Training;
        let mut req = TrainRequest::new(&dataset, spec.latency_budget_ms, config.seed);
        req.grid = config.grid.clone();
        req.candidate_set = config.candidate_set.clone();
        req.latency_samples = config.latency_samples;
        req.parallel = config.parallel;
        let RetrainOutcome { output, attempts } = retrain_until_budget(&req, config.max_attempts).map_err(at(phase))?;
        let mut artifact = output.artifact;
        export_artifact(&mut artifact, &model_path).map_err(at(phase))?;
        let checksum = file_sha256(&model_path).map_err(at(phase))?;
        let training = TrainingReport {
            report: artifact.report.clone(),
            winner: output.candidates[output.winner].label.clone(),
            candidates: output.candidates,
            attempts,
        };
        write_json(&training, &dir.join(REPORT_FILE)).map_err(at(phase))?;
        Ok((artifact, training, checksum))
    })?;

    let descriptor = clock.time(Phase::Synthesis, never, || {
        let phase = Phase::Synthesis;
        let loc = ModelLocation { base_dir: &dir, rel_path: MODEL_FILE };
        let desc = render_xapp(&template, &spec, &artifact, loc).map_err(at(phase))?;
        validate_descriptor(&desc, &template, &dir)
            .map_err(|v| at::<PhaseError>(phase)(SynthesisError::Validation(v).into()))?;
        write_descriptor(&desc, &dir.join(DESCRIPTOR_FILE)).map_err(at(phase))?;
        Ok(desc)
    })?;

    let handle = clock.time(Phase::Registration, never, || {
        register_xapp(&descriptor, &template, harness, &dir, config.replace).map_err(at(Phase::Registration))
    })?;
    let total_wall_ms = started.elapsed().as_secs_f64() * 1_000.0;

    let manifest = RunManifest {
        run_id: id.clone(),
        created_at: chrono::Utc::now().to_rfc3339(),
        backend: backend.name().to_string(),
        spec: spec.clone(),
        spec_hash: spec.spec_hash(),
        trace_seed: trace.cell.seed,
        seed: config.seed,
        dataset_provenance: dataset.provenance_hash(),
        dataset_rows: dataset.rows.len(),
        artifact_sha256: checksum.clone(),
        xapp_id: descriptor.xapp_id.clone(),
        winner: training.winner.clone(),
        retrain_attempts: training.attempts.len().saturating_sub(1),
        timings: clock.timings.clone(),
        total_wall_ms,
        files: RunFiles {
            trace: TRACE_FILE.into(),
            dataset: DATASET_FILE.into(),
            model: MODEL_FILE.into(),
            report: REPORT_FILE.into(),
            descriptor: DESCRIPTOR_FILE.into(),
        },
    };
    if let Err(e) = write_json(&manifest, &dir.join(MANIFEST_FILE)) {
        harness.deregister(&descriptor.xapp_id);
        return Err(ProvisionError { phase: Phase::Registration, source: e });
    }

    Ok(ProvisionOutcome::Provisioned(Box::new(ProvisionResult {
        run_id: id,
        run_dir: dir,
        dataset_provenance: manifest.dataset_provenance.clone(),
        spec,
        artifact_path: model_path,
        artifact_sha256: checksum,
        retrain_attempts: manifest.retrain_attempts,
        training,
        descriptor,
        handle,
        timings: clock.timings,
        manifest,
    })))
}

pub fn total_ms(timings: &[PhaseTiming]) -> f64 {
    timings.iter().map(|t| t.wall_ms).sum()
}

/// Per-phase wall-clock table with a total row.
pub fn timing_report(timings: &[PhaseTiming]) -> String {
    let cold = timings.iter().any(|t| t.cold);
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:>12}", "phase", "wall_ms");
    for t in timings {
        let _ = writeln!(out, "{:<16} {:>12.3}", t.phase.as_str(), t.wall_ms);
    }
    let _ = writeln!(out, "{:<16} {:>12.3}", "total", total_ms(timings));
    let _ = writeln!(out, "intent backend: {}", if cold { "cold start" } else { "warm" });
    out
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest, PhaseError> {
    let path = run_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| PhaseError::Parse { path: path.display().to_string(), msg: e.to_string() })
}

pub fn load_training_report(run_dir: &Path) -> Result<TrainingReport, PhaseError> {
    let path = run_dir.join(REPORT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| PhaseError::Parse { path: path.display().to_string(), msg: e.to_string() })
}

/// Register a stored run's descriptor in a fresh harness.
pub fn load_deployment(run_dir: &Path, harness: &RicHarness) -> Result<Arc<XAppHandle>, PhaseError> {
    let desc = read_descriptor(&run_dir.join(DESCRIPTOR_FILE))?;
    Ok(register_xapp(&desc, &XAppTemplate::builtin(), harness, run_dir, true)?)
}

/// Closed-loop results of a deployed xApp next to the references it is
/// judged against.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Deployed xApp, acting on its predictions.
    pub ml: RunMetrics,
    /// Same model with its action removed.
    pub monitor_only: RunMetrics,
    /// Instantaneous-threshold predictor at the labeling threshold.
    pub baseline: RunMetrics,
}

/// Replay a trace (the run's own unless `replay` is given) through the
/// deployed xApp, its monitor-only twin, and the threshold baseline.
pub fn evaluate_deployment(run_dir: &Path, replay: Option<&Path>) -> Result<Evaluation, PhaseError> {
    let manifest = load_manifest(run_dir)?;
    let harness = RicHarness::new();
    let handle = load_deployment(run_dir, &harness)?;
    let trace_path = replay.map_or_else(|| run_dir.join(&manifest.files.trace), Path::to_path_buf);
    let trace = read_trace(&trace_path)?;
    let config = RunConfig::new(manifest.spec.label_rule);

    let ml = run_closed_loop(&mut TraceReplay::new(&trace), &handle, &config)?;
    let mut quiet = (*handle).clone();
    quiet.action = None;
    let monitor_only = run_closed_loop(&mut TraceReplay::new(&trace), &quiet, &config)?;
    let baseline = run_closed_loop(
        &mut TraceReplay::new(&trace),
        &baseline_threshold_xapp(manifest.spec.label_rule.threshold_fraction),
        &config,
    )?;
    Ok(Evaluation { ml, monitor_only, baseline })
}

/// Side-by-side summary of an [`Evaluation`].
pub fn evaluation_table(e: &Evaluation) -> String {
    let mut out = String::new();
    let fmt_opt = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |x| format!("{x:.digits$}"));
    let _ = writeln!(
        out,
        "{:<14} {:>10} {:>9} {:>10} {:>11} {:>11} {:>10} {:>10}",
        "xapp", "acc(h)", "f1(h)", "acc(raw)", "lead(med)", "edge_share", "p99_us", "violations"
    );
    for (name, m) in [("ml", &e.ml), ("monitor_only", &e.monitor_only), ("baseline", &e.baseline)] {
        let s = &m.summary;
        let _ = writeln!(
            out,
            "{:<14} {:>10.4} {:>9.4} {:>10.4} {:>11} {:>11} {:>10.2} {:>10}",
            name,
            s.accuracy_vs_horizon,
            s.f1_macro,
            s.accuracy_vs_raw,
            fmt_opt(s.median_onset_lead, 1),
            fmt_opt(s.edge_prb_share_during_bursts, 4),
            s.inference_p99_us,
            s.budget_violations
        );
    }
    let _ = writeln!(
        out,
        "accuracy gap (ml - baseline, horizon labels): {:+.4}",
        e.ml.summary.accuracy_vs_horizon - e.baseline.summary.accuracy_vs_horizon
    );
    let _ = writeln!(out, "ml onset leads per burst: {:?}", e.ml.summary.onset_leads);
    out
}
