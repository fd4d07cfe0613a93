//! Simulated Near-RT RIC.
//!
//! [`run_closed_loop`] steps a [`DemandSource`] one interval at a time,
//! hands the utilization history to an xApp, times its inference, and feeds
//! its reservation decisions back into the scheduler from the next interval
//! on.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::curation::{compute_features, horizon_labels, raw_labels};
use crate::intent::{ActionType, LabelRule, Metric, MAX_RESERVATION_FRACTION};
use crate::mlengine::{metrics, predict, MlError, ModelArtifact, Prediction};
use crate::synthesis::XAppDescriptor;
use crate::telemetry::{step_interval, BurstPhase, DemandSource, Reservation, TargetClass, TrafficPattern, UeClass};

/// Near-RT control-loop deadline per inference.
pub const CONTROL_BUDGET_US: f64 = 10_000.0;
/// Quiet intervals that must precede a congestion onset.
pub const DEFAULT_ONSET_GAP: usize = 50;
/// How far before an onset a prediction may count towards the lead.
pub const DEFAULT_LEAD_WINDOW: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum RicError {
    #[error("xApp {0} is already registered")]
    Duplicate(String),
    #[error("subscription granularity {subscription_ms} ms does not match the cell interval of {cell_ms} ms")]
    GranularityMismatch { subscription_ms: u32, cell_ms: u32 },
    #[error("invalid control action: {0}")]
    InvalidAction(String),
    #[error("source has no intervals")]
    EmptyRun,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Reservation policy an xApp applies when it predicts congestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionPolicy {
    #[serde(rename = "type")]
    pub kind: ActionType,
    pub fraction: f64,
    pub target_class: TargetClass,
    pub ttl_intervals: u32,
}

impl ActionPolicy {
    pub fn validate(&self) -> Result<(), RicError> {
        if !(self.fraction > 0.0 && self.fraction <= MAX_RESERVATION_FRACTION) {
            return Err(RicError::InvalidAction(format!(
                "fraction {} outside (0, {MAX_RESERVATION_FRACTION}]",
                self.fraction
            )));
        }
        if self.ttl_intervals < 1 {
            return Err(RicError::InvalidAction("ttl_intervals must be >= 1".into()));
        }
        Ok(())
    }
}

/// A reservation issued at interval `t`, active over
/// `t + 1 ..= t + ttl_intervals`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub t: u32,
    #[serde(rename = "type")]
    pub kind: ActionType,
    pub fraction: f64,
    pub target_class: TargetClass,
    pub ttl_intervals: u32,
}

impl ControlAction {
    pub fn from_policy(t: u32, p: &ActionPolicy) -> Result<Self, RicError> {
        p.validate()?;
        Ok(ControlAction { t, kind: p.kind, fraction: p.fraction, target_class: p.target_class, ttl_intervals: p.ttl_intervals })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscription {
    pub metrics: Vec<Metric>,
    pub granularity_ms: u32,
    pub active: bool,
}

/// Decision logic of a registered xApp.
#[derive(Debug, Clone, PartialEq)]
pub enum XAppModel {
    /// Trained classifier over trailing-window features.
    Artifact(ModelArtifact),
    /// `util[t] > threshold`.
    Threshold(f64),
    /// Fixed output, for probing the loop.
    Constant(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub struct XAppHandle {
    pub xapp_id: String,
    pub descriptor: Option<XAppDescriptor>,
    pub model: XAppModel,
    pub subscription: Subscription,
    pub action: Option<ActionPolicy>,
}

impl XAppHandle {
    /// Intervals of history needed before the first inference.
    pub fn history_len(&self) -> usize {
        match &self.model {
            XAppModel::Artifact(a) => a.window_len,
            XAppModel::Threshold(_) | XAppModel::Constant(_) => 1,
        }
    }

    /// Predict from the trailing utilization history (oldest first).
    pub fn infer(&self, history: &[f64]) -> Result<Prediction, MlError> {
        match &self.model {
            XAppModel::Artifact(a) => {
                let window = &history[history.len().saturating_sub(a.window_len)..];
                let fv = compute_features(window).map_err(|e| MlError::Format(e.to_string()))?;
                predict(a, &fv)
            }
            XAppModel::Threshold(thr) => {
                let u = *history.last().ok_or_else(|| MlError::Format("empty history".into()))?;
                Ok(Prediction { label: u > *thr, score: u })
            }
            XAppModel::Constant(label) => Ok(Prediction { label: *label, score: f64::from(u8::from(*label)) }),
        }
    }

    pub fn with_action(mut self, action: ActionPolicy) -> Self {
        self.action = Some(action);
        self
    }
}

fn probe_handle(xapp_id: String, model: XAppModel) -> XAppHandle {
    XAppHandle {
        xapp_id,
        descriptor: None,
        model,
        subscription: Subscription { metrics: vec![Metric::PrbAllocation], granularity_ms: 100, active: true },
        action: None,
    }
}

/// Reactive baseline: flags congestion whenever current utilization exceeds
/// `threshold`. Monitor-only unless given an action with
/// [`XAppHandle::with_action`].
pub fn baseline_threshold_xapp(threshold: f64) -> XAppHandle {
    probe_handle(format!("baseline-threshold-{threshold}"), XAppModel::Threshold(threshold))
}

pub fn constant_xapp(label: bool) -> XAppHandle {
    probe_handle(format!("constant-{}", u8::from(label)), XAppModel::Constant(label))
}

/// Registry of live xApps. Registration and replacement happen under one
/// lock, so a reader never sees two handles for the same id.
#[derive(Debug, Default)]
pub struct RicHarness {
    registry: Mutex<BTreeMap<String, Arc<XAppHandle>>>,
}

impl RicHarness {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn install(&self, mut handle: XAppHandle, replace: bool) -> Result<Arc<XAppHandle>, RicError> {
        if let Some(a) = &handle.action {
            a.validate()?;
        }
        let mut reg = self.registry.lock().expect("registry lock");
        if reg.contains_key(&handle.xapp_id) && !replace {
            return Err(RicError::Duplicate(handle.xapp_id));
        }
        handle.subscription.active = true;
        let handle = Arc::new(handle);
        reg.insert(handle.xapp_id.clone(), Arc::clone(&handle));
        Ok(handle)
    }

    pub fn get(&self, xapp_id: &str) -> Option<Arc<XAppHandle>> {
        self.registry.lock().expect("registry lock").get(xapp_id).cloned()
    }

    pub fn deregister(&self, xapp_id: &str) -> Option<Arc<XAppHandle>> {
        self.registry.lock().expect("registry lock").remove(xapp_id)
    }

    pub fn live_ids(&self) -> Vec<String> {
        self.registry.lock().expect("registry lock").keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.registry.lock().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub label_rule: LabelRule,
    pub budget_us: f64,
    pub onset_gap: usize,
    pub lead_window: usize,
}

impl RunConfig {
    pub fn new(label_rule: LabelRule) -> Self {
        RunConfig { label_rule, budget_us: CONTROL_BUDGET_US, onset_gap: DEFAULT_ONSET_GAP, lead_window: DEFAULT_LEAD_WINDOW }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub t: u32,
    pub util: f64,
    pub raw_label: bool,
    /// Absent for the last `horizon` intervals.
    pub horizon_label: Option<bool>,
    pub prediction: bool,
    pub score: f64,
    /// Zero when no inference ran (warm-up or quarantine).
    pub inference_us: f64,
    pub action_active: bool,
    pub reserved_prbs: u32,
    pub edge_prb_allocated: u32,
    pub edge_prb_demanded: u32,
    /// Every bursty UE is at full rate.
    pub burst_on: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub xapp_id: String,
    pub intervals: usize,
    pub accuracy_vs_horizon: f64,
    pub f1_macro: f64,
    pub accuracy_vs_raw: f64,
    pub f1_macro_vs_raw: f64,
    pub onset_leads: Vec<u32>,
    pub median_onset_lead: Option<f64>,
    pub burst_intervals: usize,
    pub edge_prb_share_during_bursts: Option<f64>,
    pub budget_violations: usize,
    pub inference_p99_us: f64,
    pub positive_predictions: usize,
    pub actions_issued: usize,
    pub action_intervals: usize,
    pub quarantined: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub xapp_id: String,
    pub total_prbs: u32,
    pub rows: Vec<RunRow>,
    pub actions: Vec<ControlAction>,
    /// Set when inference failed; the xApp stopped acting from then on.
    pub quarantined: Option<String>,
    pub summary: RunSummary,
}

pub const RUN_CSV_HEADER: &str = "t,util,raw_label,horizon_label,prediction,score,action_active,reserved_prbs,edge_prb_allocated,edge_prb_demanded,burst_on";

impl RunMetrics {
    /// Per-interval CSV. `inference_us` is appended as the last column only
    /// when `with_timing` is set, since it is the one non-reproducible field.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::with_capacity(self.rows.len() * 64);
        out.push_str(RUN_CSV_HEADER);
        out.push_str(if with_timing { ",inference_us\n" } else { "\n" });
        for r in &self.rows {
            let h = r.horizon_label.map_or(String::new(), |h| u8::from(h).to_string());
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.util,
                u8::from(r.raw_label),
                h,
                u8::from(r.prediction),
                r.score,
                u8::from(r.action_active),
                r.reserved_prbs,
                r.edge_prb_allocated,
                r.edge_prb_demanded,
                u8::from(r.burst_on)
            );
            if with_timing {
                let _ = write!(out, ",{}", r.inference_us);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, csv: &Path, summary_json: &Path) -> Result<(), RicError> {
        let io = |p: &Path, source| RicError::Io { path: p.display().to_string(), source };
        std::fs::write(csv, self.to_csv(true)).map_err(|e| io(csv, e))?;
        let json = serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n";
        std::fs::write(summary_json, json).map_err(|e| io(summary_json, e))
    }
}

/// Drive `source` to completion with `handle` in the loop.
pub fn run_closed_loop(source: &mut dyn DemandSource, handle: &XAppHandle, config: &RunConfig) -> Result<RunMetrics, RicError> {
    let cell_ms = source.cell().interval_ms;
    if handle.subscription.granularity_ms != cell_ms {
        return Err(RicError::GranularityMismatch { subscription_ms: handle.subscription.granularity_ms, cell_ms });
    }
    if let Some(a) = &handle.action {
        a.validate()?;
    }
    let count = source.interval_count();
    if count == 0 {
        return Err(RicError::EmptyRun);
    }
    let total = source.cell().total_prbs;
    let interval_s = source.cell().interval_s();
    let ues = source.ues().to_vec();
    let need = handle.history_len();

    let mut util_hist: Vec<f64> = Vec::with_capacity(count as usize);
    let mut rows: Vec<RunRow> = Vec::with_capacity(count as usize);
    let mut actions = Vec::new();
    // Reservation in force for intervals < expires_at.
    let mut active: Option<(Reservation, u32)> = None;
    let mut quarantined: Option<String> = None;

    for t in 0..count {
        let reservation = active.filter(|&(_, until)| t < until).map(|(r, _)| r);
        let out = step_interval(source, t, reservation.as_ref());
        util_hist.push(out.util);

        let (mut edge_alloc, mut edge_dem) = (0, 0);
        for (ue, rec) in ues.iter().zip(&out.records) {
            if ue.class == UeClass::Edge {
                edge_alloc += rec.prb_allocated;
                edge_dem += rec.prb_demanded;
            }
        }
        let burst_on = ues.iter().any(|u| u.traffic == TrafficPattern::BurstyOnOff)
            && ues
                .iter()
                .filter(|u| u.traffic == TrafficPattern::BurstyOnOff)
                .all(|u| u.phase(t, interval_s).0 == BurstPhase::On);

        let mut prediction = Prediction { label: false, score: 0.0 };
        let mut inference_us = 0.0;
        if quarantined.is_none() && util_hist.len() >= need {
            let start = Instant::now();
            let result = handle.infer(&util_hist);
            inference_us = start.elapsed().as_nanos() as f64 / 1_000.0;
            match result {
                Ok(p) => prediction = p,
                Err(e) => {
                    quarantined = Some(format!("interval {t}: {e}"));
                    active = None;
                }
            }
        }
        if prediction.label && quarantined.is_none() {
            if let Some(policy) = &handle.action {
                let action = ControlAction::from_policy(t, policy)?;
                let until = t + 1 + action.ttl_intervals;
                let keep = active.map_or(0, |(_, u)| u);
                active = Some((Reservation { fraction: action.fraction, target: action.target_class }, until.max(keep)));
                actions.push(action);
            }
        }

        rows.push(RunRow {
            t,
            util: out.util,
            raw_label: false,
            horizon_label: None,
            prediction: prediction.label,
            score: prediction.score,
            inference_us,
            action_active: reservation.is_some(),
            reserved_prbs: reservation.map_or(0, |r| r.pool(total)),
            edge_prb_allocated: edge_alloc,
            edge_prb_demanded: edge_dem,
            burst_on,
        });
    }

    let raw = raw_labels(&util_hist, config.label_rule.threshold_fraction);
    let horizon = horizon_labels(&raw, config.label_rule.horizon_intervals as usize);
    for (i, row) in rows.iter_mut().enumerate() {
        row.raw_label = raw[i];
        row.horizon_label = horizon.get(i).copied();
    }
    let mut metrics = RunMetrics {
        xapp_id: handle.xapp_id.clone(),
        total_prbs: total,
        rows,
        actions,
        quarantined,
        summary: empty_summary(),
    };
    metrics.summary = evaluate_run(&metrics, config);
    Ok(metrics)
}

fn empty_summary() -> RunSummary {
    RunSummary {
        xapp_id: String::new(),
        intervals: 0,
        accuracy_vs_horizon: 0.0,
        f1_macro: 0.0,
        accuracy_vs_raw: 0.0,
        f1_macro_vs_raw: 0.0,
        onset_leads: Vec::new(),
        median_onset_lead: None,
        burst_intervals: 0,
        edge_prb_share_during_bursts: None,
        budget_violations: 0,
        inference_p99_us: 0.0,
        positive_predictions: 0,
        actions_issued: 0,
        action_intervals: 0,
        quarantined: None,
    }
}

/// Intervals where congestion begins after at least `gap` quiet intervals
/// (or at the start of the run).
pub fn congestion_onsets(raw: &[bool], gap: usize) -> Vec<usize> {
    (0..raw.len()).filter(|&t| raw[t] && raw[t.saturating_sub(gap)..t].iter().all(|&r| !r)).collect()
}

/// Per-onset lead: onset minus the first positive prediction within
/// `window` intervals before it (inclusive of the onset itself); 0 when
/// the predictor fires late or not at all.
pub fn onset_leads(raw: &[bool], predictions: &[bool], gap: usize, window: usize) -> Vec<u32> {
    congestion_onsets(raw, gap)
        .into_iter()
        .map(|o| {
            let lo = o.saturating_sub(window);
            (lo..=o).find(|&p| predictions[p]).map_or(0, |p| (o - p) as u32)
        })
        .collect()
}

pub fn median(values: &[u32]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { f64::from(v[m]) } else { (f64::from(v[m - 1]) + f64::from(v[m])) / 2.0 })
}

pub fn evaluate_run(run: &RunMetrics, config: &RunConfig) -> RunSummary {
    let rows = &run.rows;
    let raw: Vec<bool> = rows.iter().map(|r| r.raw_label).collect();
    let preds: Vec<bool> = rows.iter().map(|r| r.prediction).collect();
    let (h_truth, h_pred): (Vec<bool>, Vec<bool>) =
        rows.iter().filter_map(|r| r.horizon_label.map(|h| (h, r.prediction))).unzip();
    let vs_h = metrics::confusion(&h_truth, &h_pred);
    let vs_raw = metrics::confusion(&raw, &preds);
    let leads = onset_leads(&raw, &preds, config.onset_gap, config.lead_window);
    let bursts: Vec<&RunRow> = rows.iter().filter(|r| r.burst_on).collect();
    let share = (!bursts.is_empty()).then(|| {
        bursts.iter().map(|r| f64::from(r.edge_prb_allocated)).sum::<f64>() / (bursts.len() as f64 * f64::from(run.total_prbs))
    });
    let mut timings: Vec<f64> = rows.iter().map(|r| r.inference_us).collect();
    timings.sort_by(f64::total_cmp);
    RunSummary {
        xapp_id: run.xapp_id.clone(),
        intervals: rows.len(),
        accuracy_vs_horizon: vs_h.accuracy(),
        f1_macro: vs_h.f1_macro(),
        accuracy_vs_raw: vs_raw.accuracy(),
        f1_macro_vs_raw: vs_raw.f1_macro(),
        median_onset_lead: median(&leads),
        onset_leads: leads,
        burst_intervals: bursts.len(),
        edge_prb_share_during_bursts: share,
        budget_violations: rows.iter().filter(|r| r.inference_us > config.budget_us).count(),
        inference_p99_us: if timings.is_empty() { 0.0 } else { crate::mlengine::percentile_nearest_rank(&timings, 0.99) },
        positive_predictions: preds.iter().filter(|&&p| p).count(),
        actions_issued: run.actions.len(),
        action_intervals: rows.iter().filter(|r| r.action_active).count(),
        quarantined: run.quarantined.clone(),
    }
}
