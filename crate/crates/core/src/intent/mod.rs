//! Operator intent → validated [`ProvisioningSpec`].
//!
//! Two backends produce specs: the deterministic [`grammar`] parser and the
//! [`remote`] chat-completion client. Both feed [`validate_spec`], and the
//! rest of the pipeline sees only the validated spec, never which backend
//! produced it.

pub mod grammar;
pub mod remote;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use crate::telemetry::TargetClass;
pub use grammar::parse_intent;
pub use remote::{remote_parse, RemoteBackend, RemoteBackendConfig, RemoteError};

/// Near-RT RIC control-loop budget.
pub const NEAR_RT_BUDGET_MS: f64 = 10.0;
/// Largest PRB fraction any reservation may claim.
pub const MAX_RESERVATION_FRACTION: f64 = 0.5;

/// Operator input, non-empty after trimming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentText(String);

impl IntentText {
    pub fn new(raw: impl Into<String>) -> Result<Self, SpecError> {
        let raw = raw.into();
        if raw.trim().is_empty() {
            return Err(SpecError::EmptyIntent);
        }
        Ok(IntentText(raw))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    CongestionPrediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PrbAllocation,
    Snr,
    Bler,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::PrbAllocation => "prb_allocation",
            Metric::Snr => "snr",
            Metric::Bler => "bler",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        match s {
            "prb_allocation" => Some(Metric::PrbAllocation),
            "snr" => Some(Metric::Snr),
            "bler" => Some(Metric::Bler),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRule {
    pub threshold_fraction: f64,
    pub horizon_intervals: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    ReservePrb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    #[serde(rename = "type")]
    pub kind: ActionType,
    pub fraction: f64,
    pub target_class: TargetClass,
}

/// Structured, validated form of an operator intent.
///
/// Serialized field names are a stable contract (remote backends emit this
/// shape). `action: null` means monitor-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvisioningSpec {
    pub task: Task,
    pub metrics: BTreeSet<Metric>,
    pub granularity_ms: u32,
    pub label_rule: LabelRule,
    pub latency_budget_ms: f64,
    pub action: Option<ActionSpec>,
}

/// Defaults used by the rule-based parser for anything the intent leaves out.
pub mod defaults {
    use super::Metric;

    pub const THRESHOLD_FRACTION: f64 = 0.80;
    pub const HORIZON_INTERVALS: u32 = 2;
    pub const LATENCY_BUDGET_MS: f64 = 10.0;
    pub const GRANULARITY_MS: u32 = 100;
    pub const METRICS: [Metric; 2] = [Metric::PrbAllocation, Metric::Snr];
}

impl ProvisioningSpec {
    /// Spec with every default filled in and no action.
    pub fn monitor_only() -> Self {
        ProvisioningSpec {
            task: Task::CongestionPrediction,
            metrics: defaults::METRICS.into_iter().collect(),
            granularity_ms: defaults::GRANULARITY_MS,
            label_rule: LabelRule {
                threshold_fraction: defaults::THRESHOLD_FRACTION,
                horizon_intervals: defaults::HORIZON_INTERVALS,
            },
            latency_budget_ms: defaults::LATENCY_BUDGET_MS,
            action: None,
        }
    }

    /// The reference intent: reserve 20% of PRBs for edge users.
    pub fn demo() -> Self {
        ProvisioningSpec {
            action: Some(ActionSpec { kind: ActionType::ReservePrb, fraction: 0.20, target_class: TargetClass::Edge }),
            ..Self::monitor_only()
        }
    }

    /// Canonical JSON encoding (struct field order, shortest float repr).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn spec_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Returned instead of a spec whenever the intent cannot be mapped without
/// guessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClarificationRequest {
    pub ambiguous_phrase: String,
    pub candidate_interpretations: Vec<String>,
}

impl fmt::Display for ClarificationRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "intent is ambiguous: \"{}\"", self.ambiguous_phrase)?;
        for (i, c) in self.candidate_interpretations.iter().enumerate() {
            writeln!(f, "  [{}] {}", i + 1, c)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntentOutcome {
    Spec(ProvisioningSpec),
    Clarify(ClarificationRequest),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("intent text is empty")]
    EmptyIntent,
    #[error("invalid provisioning spec: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldError>),
}

/// Check every spec invariant. Returns the spec unchanged when valid.
pub fn validate_spec(spec: ProvisioningSpec) -> Result<ProvisioningSpec, SpecError> {
    let mut errors = Vec::new();
    let mut push = |field: &'static str, message: String| errors.push(FieldError { field, message });

    if spec.metrics.is_empty() {
        push("metrics", "at least one metric is required".into());
    }
    if spec.granularity_ms == 0 {
        push("granularity_ms", "must be > 0".into());
    }
    let thr = spec.label_rule.threshold_fraction;
    if !(thr > 0.0 && thr < 1.0) {
        push("label_rule.threshold_fraction", format!("{thr} is outside the open range (0, 1)"));
    }
    let budget = spec.latency_budget_ms;
    if !(budget > 0.0 && budget.is_finite()) {
        push("latency_budget_ms", format!("{budget} must be a positive number"));
    } else if budget > NEAR_RT_BUDGET_MS {
        push(
            "latency_budget_ms",
            format!("{budget} ms exceeds the Near-RT RIC budget of {NEAR_RT_BUDGET_MS} ms"),
        );
    }
    if let Some(action) = &spec.action {
        let f = action.fraction;
        if f.is_nan() || f <= 0.0 {
            push("action.fraction", format!("{f} must be > 0"));
        } else if f > MAX_RESERVATION_FRACTION {
            push(
                "action.fraction",
                format!("reservation exceeds guardrail: {f} > {MAX_RESERVATION_FRACTION}"),
            );
        }
    }
    if errors.is_empty() {
        Ok(spec)
    } else {
        Err(SpecError::Invalid(errors))
    }
}

/// Something that turns intent text into a spec or a clarification request.
pub trait IntentBackend {
    fn name(&self) -> &str;
    fn parse(&mut self, text: &IntentText) -> Result<IntentOutcome, RemoteError>;
    /// True when the most recent `parse` paid a first-call initialization.
    fn last_call_was_cold(&self) -> bool {
        false
    }
}

/// The deterministic grammar parser as a backend.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleBackend;

impl IntentBackend for RuleBackend {
    fn name(&self) -> &str {
        "rule"
    }

    fn parse(&mut self, text: &IntentText) -> Result<IntentOutcome, RemoteError> {
        Ok(parse_intent(text))
    }
}
