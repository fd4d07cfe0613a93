//! Python bindings for the ricforge pipeline.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ricforge::curation::{self, LabeledDataset, FEATURE_NAMES};
use ricforge::intent::{self, validate_spec, IntentOutcome, IntentText, ProvisioningSpec, RuleBackend};
use ricforge::mlengine::{self, Algorithm, ModelArtifact, TrainRequest};
use ricforge::orchestrator::{self, ProvisionConfig, ProvisionOutcome, TraceSource};
use ricforge::ricsim::RicHarness;
use ricforge::telemetry::{self, TelemetryTrace};

fn runtime<E: ToString>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn value<E: ToString>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, json: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (json,))
}

#[pyclass(name = "ProvisioningSpec", module = "ricforge_py", frozen)]
struct PySpec {
    inner: ProvisioningSpec,
}

#[pymethods]
impl PySpec {
    /// Predict congestion and reserve 20% of PRBs for edge users.
    #[staticmethod]
    fn demo() -> Self {
        PySpec { inner: ProvisioningSpec::demo() }
    }

    #[staticmethod]
    fn monitor_only() -> Self {
        PySpec { inner: ProvisioningSpec::monitor_only() }
    }

    /// Parse and validate a spec from JSON.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: ProvisioningSpec = serde_json::from_str(text).map_err(value)?;
        Ok(PySpec { inner: validate_spec(spec).map_err(value)? })
    }

    fn to_json(&self) -> String {
        self.inner.canonical_json()
    }

    fn spec_hash(&self) -> String {
        self.inner.spec_hash()
    }

    #[getter]
    fn threshold_fraction(&self) -> f64 {
        self.inner.label_rule.threshold_fraction
    }

    #[getter]
    fn horizon_intervals(&self) -> u32 {
        self.inner.label_rule.horizon_intervals
    }

    #[getter]
    fn latency_budget_ms(&self) -> f64 {
        self.inner.latency_budget_ms
    }

    #[getter]
    fn granularity_ms(&self) -> u32 {
        self.inner.granularity_ms
    }

    #[getter]
    fn action_fraction(&self) -> Option<f64> {
        self.inner.action.map(|a| a.fraction)
    }

    #[getter]
    fn target_class(&self) -> Option<&'static str> {
        self.inner.action.map(|a| a.target_class.as_str())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("ProvisioningSpec({})", self.inner.canonical_json())
    }
}

#[pyclass(name = "Clarification", module = "ricforge_py", frozen)]
struct PyClarification {
    #[pyo3(get)]
    ambiguous_phrase: String,
    #[pyo3(get)]
    candidate_interpretations: Vec<String>,
}

#[pymethods]
impl PyClarification {
    fn __repr__(&self) -> String {
        format!("Clarification({:?}, {:?})", self.ambiguous_phrase, self.candidate_interpretations)
    }
}

/// Rule-based intent parsing. Returns a `ProvisioningSpec` or a
/// `Clarification`.
#[pyfunction]
fn parse_intent(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    let text = IntentText::new(text).map_err(value)?;
    match intent::parse_intent(&text) {
        IntentOutcome::Spec(spec) => {
            let spec = validate_spec(spec).map_err(value)?;
            Ok(Bound::new(py, PySpec { inner: spec })?.into_any().unbind())
        }
        IntentOutcome::Clarify(c) => Ok(Bound::new(
            py,
            PyClarification { ambiguous_phrase: c.ambiguous_phrase, candidate_interpretations: c.candidate_interpretations },
        )?
        .into_any()
        .unbind()),
    }
}

#[pyclass(name = "Trace", module = "ricforge_py", frozen)]
struct PyTrace {
    inner: TelemetryTrace,
}

#[pymethods]
impl PyTrace {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyTrace { inner: telemetry::read_trace(&path).map_err(runtime)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        telemetry::write_trace(&self.inner, &path).map_err(runtime)
    }

    /// Aggregate PRB utilization per interval.
    #[getter]
    fn util(&self) -> Vec<f64> {
        self.inner.util.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.cell.seed
    }

    fn __len__(&self) -> usize {
        self.inner.interval_count()
    }
}

/// Simulate the default three-UE scenario.
#[pyfunction]
#[pyo3(signature = (seed = 42, duration_s = None))]
fn simulate(py: Python<'_>, seed: u64, duration_s: Option<f64>) -> PyResult<PyTrace> {
    let (mut cell, ues) = telemetry::default_scenario(seed);
    if let Some(d) = duration_s {
        cell.duration_s = d;
    }
    let trace = py.detach(|| telemetry::generate_trace(&cell, &ues)).map_err(value)?;
    Ok(PyTrace { inner: trace })
}

/// Mean, standard deviation, minimum, and slope of a utilization window.
#[pyfunction]
fn compute_features<'py>(py: Python<'py>, window: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let fv = curation::compute_features(&window).map_err(value)?;
    let d = PyDict::new(py);
    for (name, v) in FEATURE_NAMES.iter().zip(fv.values()) {
        d.set_item(*name, v)?;
    }
    Ok(d)
}

#[pyclass(name = "Dataset", module = "ricforge_py", frozen)]
struct PyDataset {
    inner: LabeledDataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }

    #[getter]
    fn positives(&self) -> usize {
        self.inner.positives()
    }

    #[getter]
    fn window_len(&self) -> usize {
        self.inner.window_len
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn provenance_hash(&self) -> String {
        self.inner.provenance_hash()
    }
}

#[pyfunction]
#[pyo3(signature = (trace, spec, window_len = 10, stride = 1, fold_seed = 42))]
fn build_dataset(trace: &PyTrace, spec: &PySpec, window_len: usize, stride: usize, fold_seed: u64) -> PyResult<PyDataset> {
    let ds = curation::build_dataset(&trace.inner, &spec.inner, window_len, stride, fold_seed).map_err(value)?;
    Ok(PyDataset { inner: ds })
}

#[pyclass(name = "ModelArtifact", module = "ricforge_py", frozen)]
struct PyArtifact {
    inner: ModelArtifact,
}

#[pymethods]
impl PyArtifact {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyArtifact { inner: mlengine::load_artifact(&path).map_err(runtime)? })
    }

    /// Write the artifact file; returns its size in bytes.
    fn export(&self, path: PathBuf) -> PyResult<u64> {
        let mut a = self.inner.clone();
        mlengine::export_artifact(&mut a, &path).map_err(runtime)
    }

    /// Score the trailing `window_len` values of a utilization history.
    fn predict(&self, history: Vec<f64>) -> PyResult<(bool, f64)> {
        let n = self.inner.window_len;
        if history.len() < n {
            return Err(PyValueError::new_err(format!("need at least {n} values, got {}", history.len())));
        }
        let fv = curation::compute_features(&history[history.len() - n..]).map_err(value)?;
        let p = mlengine::predict(&self.inner, &fv).map_err(runtime)?;
        Ok((p.label, p.score))
    }

    #[getter]
    fn algorithm(&self) -> &'static str {
        self.inner.algorithm.as_str()
    }

    #[getter]
    fn hyperparams(&self) -> String {
        self.inner.report.hyperparams.label()
    }

    #[getter]
    fn accuracy(&self) -> f64 {
        self.inner.report.accuracy
    }

    #[getter]
    fn f1_macro(&self) -> f64 {
        self.inner.report.f1_macro
    }

    #[getter]
    fn size_bytes(&self) -> u64 {
        self.inner.report.size_bytes
    }

    #[getter]
    fn latency_us_p99(&self) -> Option<f64> {
        self.inner.report.latency_us_p99
    }

    #[getter]
    fn window_len(&self) -> usize {
        self.inner.window_len
    }

    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &serde_json::to_string(&self.inner.report).map_err(runtime)?)
    }
}

/// Latency-budgeted model selection over the default candidate grid.
#[pyfunction]
#[pyo3(signature = (dataset, latency_budget_ms = 10.0, seed = 42, latency_samples = 1000, algorithms = None))]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    latency_budget_ms: f64,
    seed: u64,
    latency_samples: usize,
    algorithms: Option<Vec<String>>,
) -> PyResult<PyArtifact> {
    let mut req = TrainRequest::new(&dataset.inner, latency_budget_ms, seed);
    req.latency_samples = latency_samples;
    if let Some(names) = algorithms {
        req.candidate_set = names
            .iter()
            .map(|n| Algorithm::parse(n).ok_or_else(|| PyValueError::new_err(format!("unknown algorithm {n:?}"))))
            .collect::<PyResult<BTreeSet<_>>>()?;
    }
    let artifact = py.detach(|| mlengine::train(&req)).map_err(runtime)?;
    Ok(PyArtifact { inner: artifact })
}

/// Run the whole pipeline with the rule-based backend. Returns a dict with
/// `status` "provisioned" (plus the run manifest) or "clarification".
#[pyfunction]
#[pyo3(signature = (intent, out_dir, seed = 42, duration_s = None, latency_samples = 1000))]
fn provision<'py>(
    py: Python<'py>,
    intent: &str,
    out_dir: PathBuf,
    seed: u64,
    duration_s: Option<f64>,
    latency_samples: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let (mut cell, ues) = telemetry::default_scenario(seed);
    if let Some(d) = duration_s {
        cell.duration_s = d;
    }
    let mut config = ProvisionConfig::new(out_dir, seed);
    config.latency_samples = latency_samples;
    let source = TraceSource::Simulate { cell, ues };
    let outcome = py
        .detach(|| orchestrator::provision(intent, &mut RuleBackend, &source, &config, &RicHarness::new()))
        .map_err(runtime)?;
    let json = match outcome {
        ProvisionOutcome::Provisioned(r) => serde_json::json!({
            "status": "provisioned",
            "run_id": r.run_id,
            "run_dir": r.run_dir,
            "manifest": r.manifest,
            "timing_report": orchestrator::timing_report(&r.timings),
        }),
        ProvisionOutcome::Clarification(c) => serde_json::json!({"status": "clarification", "request": c}),
    };
    json_to_py(py, &json.to_string())
}

/// Replay a provisioned run through the xApp, its monitor-only twin, and
/// the threshold baseline; returns the three summaries.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, run_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let e = py.detach(|| orchestrator::evaluate_deployment(&run_dir, None)).map_err(runtime)?;
    let json = serde_json::json!({
        "ml": e.ml.summary,
        "monitor_only": e.monitor_only.summary,
        "baseline": e.baseline.summary,
    });
    json_to_py(py, &json.to_string())
}

#[pymodule]
pub fn ricforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpec>()?;
    m.add_class::<PyClarification>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyArtifact>()?;
    m.add_function(wrap_pyfunction!(parse_intent, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(compute_features, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(provision, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
