//! Template-constrained xApp synthesis.
//!
//! An xApp is a declarative manifest rendered from a fixed template. Every
//! slot is filled from the [`ProvisioningSpec`] and the exported
//! [`ModelArtifact`] through [`slot_values`]; nothing else reaches the body.
//! Rendering, validation, and registration all fail closed.

pub mod template;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::curation::FEATURE_NAMES;
use crate::intent::{validate_spec, ActionType, Metric, ProvisioningSpec, SpecError};
use crate::mlengine::{artifact, MlError, ModelArtifact};
use crate::ricsim::{ActionPolicy, RicError, RicHarness, Subscription, XAppHandle, XAppModel};

pub use template::{placeholders, Charset, SlotRule, SlotSpec, SlotValue, XAppTemplate};

/// Sentinels written into the action slots of a monitor-only xApp.
pub const NO_ACTION: &str = "none";

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("template: {0}")]
    Template(String),
    #[error("slot {0} has no mapping")]
    UnmappedSlot(String),
    #[error("slot {slot}: {message}")]
    SlotViolation { slot: String, message: String },
    #[error("model checksum: {0}")]
    Checksum(String),
    #[error("model: {0}")]
    Model(#[from] MlError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("descriptor failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
    #[error("registration: {0}")]
    Registration(#[from] RicError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("descriptor {path}: {msg}")]
    Parse { path: String, msg: String },
}

/// One descriptor problem, tied to the slot it concerns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub slot: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.slot, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XAppDescriptor {
    pub xapp_id: String,
    pub template_id: String,
    pub template_version: String,
    pub spec_hash: String,
    pub model_ref: ModelRef,
    pub decision_threshold: f64,
    pub window_len: usize,
    pub subscription_metrics: Vec<Metric>,
    pub granularity_ms: u32,
    /// `None` for a monitor-only xApp.
    pub action: Option<ActionPolicy>,
    pub inference_budget_ms: f64,
    pub rendered_body: String,
}

impl XAppDescriptor {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

pub fn write_descriptor(desc: &XAppDescriptor, path: &Path) -> Result<(), SynthesisError> {
    std::fs::write(path, desc.to_json()).map_err(|source| SynthesisError::Io { path: path.display().to_string(), source })
}

pub fn read_descriptor(path: &Path) -> Result<XAppDescriptor, SynthesisError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| SynthesisError::Io { path: path.display().to_string(), source })?;
    XAppDescriptor::from_json(&text).map_err(|e| SynthesisError::Parse { path: path.display().to_string(), msg: e.to_string() })
}

/// Where an exported artifact lives: `base_dir/rel_path`.
#[derive(Debug, Clone, Copy)]
pub struct ModelLocation<'a> {
    pub base_dir: &'a Path,
    pub rel_path: &'a str,
}

/// Reservation lifetime: long enough to cover the prediction horizon.
pub fn action_ttl(spec: &ProvisioningSpec) -> u32 {
    spec.label_rule.horizon_intervals.saturating_add(1)
}

fn action_policy(spec: &ProvisioningSpec) -> Option<ActionPolicy> {
    spec.action.map(|a| ActionPolicy {
        kind: a.kind,
        fraction: a.fraction,
        target_class: a.target_class,
        ttl_intervals: action_ttl(spec),
    })
}

fn xapp_id(spec_hash: &str, checksum: &str, template: &XAppTemplate) -> String {
    let mut h = Sha256::new();
    for part in [spec_hash, checksum, &template.template_id, &template.version] {
        h.update(part.as_bytes());
        h.update([0]);
    }
    format!("cp-{}", &hex::encode(h.finalize())[..12])
}

/// The fixed mapping from (spec, artifact, model reference) to slot values.
pub fn slot_values(
    spec: &ProvisioningSpec,
    artifact: &ModelArtifact,
    model_ref: &ModelRef,
    xapp_id: &str,
) -> BTreeMap<&'static str, SlotValue> {
    let (action_type, fraction, target, ttl) = match action_policy(spec) {
        Some(p) => (action_name(p.kind), p.fraction, p.target_class.as_str(), i64::from(p.ttl_intervals)),
        None => (NO_ACTION, 0.0, NO_ACTION, 0),
    };
    BTreeMap::from([
        ("xapp_id", SlotValue::Str(xapp_id.to_string())),
        ("spec_hash", SlotValue::Str(spec.spec_hash())),
        ("model_path", SlotValue::Str(model_ref.path.clone())),
        ("model_checksum", SlotValue::Str(model_ref.sha256.clone())),
        ("decision_threshold", SlotValue::Num(artifact.threshold)),
        ("window_len", SlotValue::Int(artifact.window_len as i64)),
        ("metrics", SlotValue::List(spec.metrics.iter().map(|m| m.as_str().to_string()).collect())),
        ("granularity_ms", SlotValue::Int(i64::from(spec.granularity_ms))),
        ("inference_budget_ms", SlotValue::Num(spec.latency_budget_ms)),
        ("action_type", SlotValue::Str(action_type.to_string())),
        ("action_fraction", SlotValue::Num(fraction)),
        ("target_class", SlotValue::Str(target.to_string())),
        ("ttl_intervals", SlotValue::Int(ttl)),
    ])
}

fn action_name(kind: ActionType) -> &'static str {
    match kind {
        ActionType::ReservePrb => "reserve_prb",
    }
}

fn model_checksum_matches(artifact: &ModelArtifact, loc: &ModelLocation) -> Result<String, SynthesisError> {
    let path = loc.base_dir.join(loc.rel_path);
    let bytes = std::fs::read(&path).map_err(|source| SynthesisError::Io { path: path.display().to_string(), source })?;
    let on_disk = artifact::from_bytes(&bytes).map_err(|e| SynthesisError::Checksum(format!("{}: {e}", path.display())))?;
    let mut expected = artifact.clone();
    expected.report.latency_us_p99 = None;
    let expected_bytes = artifact::to_bytes(&mut expected);
    if on_disk != expected || bytes != expected_bytes {
        return Err(SynthesisError::Checksum(format!("{} does not hold the trained model", path.display())));
    }
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Fill the template. Output depends only on the arguments.
pub fn render_xapp(
    template: &XAppTemplate,
    spec: &ProvisioningSpec,
    artifact: &ModelArtifact,
    model: ModelLocation,
) -> Result<XAppDescriptor, SynthesisError> {
    let spec = validate_spec(spec.clone())?;
    if !spec.metrics.contains(&Metric::PrbAllocation) {
        return Err(SynthesisError::SlotViolation {
            slot: "metrics".into(),
            message: "the model's features need the prb_allocation metric".into(),
        });
    }
    let checksum = model_checksum_matches(artifact, &model)?;
    let model_ref = ModelRef { path: model.rel_path.to_string(), sha256: checksum };
    let spec_hash = spec.spec_hash();
    let id = xapp_id(&spec_hash, &model_ref.sha256, template);
    let values = slot_values(&spec, artifact, &model_ref, &id);

    let mut body = template.body.clone();
    for slot in &template.slots {
        let value = values.get(slot.name.as_str()).ok_or_else(|| SynthesisError::UnmappedSlot(slot.name.clone()))?;
        slot.rule
            .check(value)
            .map_err(|message| SynthesisError::SlotViolation { slot: slot.name.clone(), message })?;
        body = body.replace(&format!("{{{{{}}}}}", slot.name), &value.to_string());
    }
    if let Some(left) = placeholders(&body).into_iter().next() {
        return Err(SynthesisError::UnmappedSlot(left));
    }
    serde_json::from_str::<Value>(&body).map_err(|e| SynthesisError::Template(format!("rendered body is not JSON: {e}")))?;

    let desc = XAppDescriptor {
        xapp_id: id,
        template_id: template.template_id.clone(),
        template_version: template.version.clone(),
        spec_hash,
        model_ref,
        decision_threshold: artifact.threshold,
        window_len: artifact.window_len,
        subscription_metrics: spec.metrics.iter().copied().collect(),
        granularity_ms: spec.granularity_ms,
        action: action_policy(&spec),
        inference_budget_ms: spec.latency_budget_ms,
        rendered_body: body,
    };
    Ok(desc)
}

/// Values the descriptor's own fields claim for each slot.
fn claimed_values(desc: &XAppDescriptor) -> BTreeMap<&'static str, SlotValue> {
    let (action_type, fraction, target, ttl) = match &desc.action {
        Some(p) => (action_name(p.kind), p.fraction, p.target_class.as_str(), i64::from(p.ttl_intervals)),
        None => (NO_ACTION, 0.0, NO_ACTION, 0),
    };
    BTreeMap::from([
        ("xapp_id", SlotValue::Str(desc.xapp_id.clone())),
        ("spec_hash", SlotValue::Str(desc.spec_hash.clone())),
        ("model_path", SlotValue::Str(desc.model_ref.path.clone())),
        ("model_checksum", SlotValue::Str(desc.model_ref.sha256.clone())),
        ("decision_threshold", SlotValue::Num(desc.decision_threshold)),
        ("window_len", SlotValue::Int(desc.window_len as i64)),
        ("metrics", SlotValue::List(desc.subscription_metrics.iter().map(|m| m.as_str().to_string()).collect())),
        ("granularity_ms", SlotValue::Int(i64::from(desc.granularity_ms))),
        ("inference_budget_ms", SlotValue::Num(desc.inference_budget_ms)),
        ("action_type", SlotValue::Str(action_type.to_string())),
        ("action_fraction", SlotValue::Num(fraction)),
        ("target_class", SlotValue::Str(target.to_string())),
        ("ttl_intervals", SlotValue::Int(ttl)),
    ])
}

/// Check a descriptor against its template and the model file under
/// `base_dir`. Every problem is reported, each with the slot it concerns.
pub fn validate_descriptor(desc: &XAppDescriptor, template: &XAppTemplate, base_dir: &Path) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut push = |slot: &str, message: String| out.push(Violation { slot: slot.to_string(), message });

    if desc.template_id != template.template_id || desc.template_version != template.version {
        push(
            "template",
            format!(
                "descriptor names {}@{}, expected {}@{}",
                desc.template_id, desc.template_version, template.template_id, template.version
            ),
        );
    }
    for marker in placeholders(&desc.rendered_body) {
        push(&marker, "unresolved placeholder in rendered body".into());
    }

    let claimed = claimed_values(desc);
    match serde_json::from_str::<Value>(&desc.rendered_body) {
        Err(e) => push("rendered_body", format!("not valid JSON: {e}")),
        Ok(body) => {
            for slot in &template.slots {
                let Some(json) = body.pointer(&slot.pointer) else {
                    push(&slot.name, format!("missing at {}", slot.pointer));
                    continue;
                };
                let value = match slot.rule.extract(json) {
                    Ok(v) => v,
                    Err(m) => {
                        push(&slot.name, m);
                        continue;
                    }
                };
                if let Err(m) = slot.rule.check(&value) {
                    push(&slot.name, m);
                }
                if let Some(c) = claimed.get(slot.name.as_str()) {
                    if *c != value {
                        push(&slot.name, format!("body has {value}, descriptor field has {c}"));
                    }
                }
                if let Err(m) = claimed.get(slot.name.as_str()).map_or(Ok(()), |c| slot.rule.check(c)) {
                    push(&slot.name, format!("descriptor field: {m}"));
                }
            }
        }
    }

    if let Some(Err(e)) = desc.action.map(|p| p.validate()) {
        push("action_fraction", e.to_string());
    }
    if !desc.subscription_metrics.contains(&Metric::PrbAllocation) {
        push("metrics", "the model's features need the prb_allocation metric".into());
    }

    if !template::is_safe_relative_path(&desc.model_ref.path) {
        push("model_path", format!("{:?} is not a plain relative path", desc.model_ref.path));
    } else {
        let path = base_dir.join(&desc.model_ref.path);
        match std::fs::read(&path) {
            Err(e) => push("model_path", format!("{}: {e}", path.display())),
            Ok(bytes) => {
                let digest = hex::encode(Sha256::digest(&bytes));
                if digest != desc.model_ref.sha256 {
                    push("model_checksum", format!("file digest {digest} does not match"));
                }
                match artifact::from_bytes(&bytes) {
                    Err(e) => push("model_path", format!("artifact does not load: {e}")),
                    Ok(a) => {
                        if a.feature_schema.iter().map(String::as_str).ne(FEATURE_NAMES) {
                            push("model_path", format!("feature schema {:?} is not {:?}", a.feature_schema, FEATURE_NAMES));
                        }
                        if a.window_len != desc.window_len {
                            push("window_len", format!("artifact window {} differs from {}", a.window_len, desc.window_len));
                        }
                        if a.threshold != desc.decision_threshold {
                            push("decision_threshold", "differs from the artifact".into());
                        }
                    }
                }
            }
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Validate, load the model from `model_dir`, and install the xApp.
/// Nothing is registered unless every step succeeds.
pub fn register_xapp(
    desc: &XAppDescriptor,
    template: &XAppTemplate,
    harness: &RicHarness,
    model_dir: &Path,
    replace: bool,
) -> Result<Arc<XAppHandle>, SynthesisError> {
    validate_descriptor(desc, template, model_dir).map_err(SynthesisError::Validation)?;
    let path = model_dir.join(&desc.model_ref.path);
    let bytes = std::fs::read(&path).map_err(|source| SynthesisError::Io { path: path.display().to_string(), source })?;
    if hex::encode(Sha256::digest(&bytes)) != desc.model_ref.sha256 {
        return Err(SynthesisError::Checksum(format!("{} changed during registration", path.display())));
    }
    let model = artifact::from_bytes(&bytes)?;
    let handle = XAppHandle {
        xapp_id: desc.xapp_id.clone(),
        descriptor: Some(desc.clone()),
        model: XAppModel::Artifact(model),
        subscription: Subscription {
            metrics: desc.subscription_metrics.clone(),
            granularity_ms: desc.granularity_ms,
            active: false,
        },
        action: desc.action,
    };
    Ok(harness.install(handle, replace)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlengine::export_artifact;
    use crate::telemetry::TargetClass;

    fn setup(dir: &Path) -> ModelArtifact {
        let mut a = ModelArtifact::constant(0.0, 10);
        export_artifact(&mut a, &dir.join("model.ormdl")).unwrap();
        a
    }

    fn loc(dir: &Path) -> ModelLocation<'_> {
        ModelLocation { base_dir: dir, rel_path: "model.ormdl" }
    }

    #[test]
    fn demo_descriptor() {
        let dir = tempfile::tempdir().unwrap();
        let a = setup(dir.path());
        let t = XAppTemplate::builtin();
        let d = render_xapp(&t, &ProvisioningSpec::demo(), &a, loc(dir.path())).unwrap();
        let p = d.action.unwrap();
        assert_eq!((p.fraction, p.target_class, p.ttl_intervals), (0.2, TargetClass::Edge, 3));
        assert_eq!(d.granularity_ms, 100);
        assert!(d.xapp_id.starts_with("cp-"));
        assert!(placeholders(&d.rendered_body).is_empty());
        validate_descriptor(&d, &t, dir.path()).unwrap();
        let again = render_xapp(&t, &ProvisioningSpec::demo(), &a, loc(dir.path())).unwrap();
        assert_eq!(d.to_json(), again.to_json());
    }

    #[test]
    fn monitor_only_uses_sentinels() {
        let dir = tempfile::tempdir().unwrap();
        let a = setup(dir.path());
        let t = XAppTemplate::builtin();
        let d = render_xapp(&t, &ProvisioningSpec::monitor_only(), &a, loc(dir.path())).unwrap();
        assert!(d.action.is_none());
        let body: Value = serde_json::from_str(&d.rendered_body).unwrap();
        assert_eq!(body["control"]["action"], "none");
        assert_eq!(body["control"]["fraction"], 0.0);
        validate_descriptor(&d, &t, dir.path()).unwrap();
    }

    #[test]
    fn checksum_mismatch_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = setup(dir.path());
        a.threshold = 0.4;
        let err = render_xapp(&XAppTemplate::builtin(), &ProvisioningSpec::demo(), &a, loc(dir.path())).unwrap_err();
        assert!(matches!(err, SynthesisError::Checksum(_)), "{err}");
    }

    #[test]
    fn leftover_marker_and_smuggled_fraction_are_caught() {
        let dir = tempfile::tempdir().unwrap();
        let a = setup(dir.path());
        let t = XAppTemplate::builtin();
        let d = render_xapp(&t, &ProvisioningSpec::demo(), &a, loc(dir.path())).unwrap();

        let mut leftover = d.clone();
        leftover.rendered_body = leftover.rendered_body.replace("\"edge\"", "\"{{target_class}}\"");
        let errs = validate_descriptor(&leftover, &t, dir.path()).unwrap_err();
        assert!(errs.iter().any(|v| v.slot == "target_class" && v.message.contains("unresolved")), "{errs:?}");

        let mut smuggled = d.clone();
        smuggled.rendered_body = smuggled.rendered_body.replace("\"fraction\": 0.2", "\"fraction\": 0.6");
        assert_ne!(smuggled.rendered_body, d.rendered_body);
        let errs = validate_descriptor(&smuggled, &t, dir.path()).unwrap_err();
        assert!(errs.iter().any(|v| v.slot == "action_fraction"), "{errs:?}");
    }

    #[test]
    fn registration_is_atomic_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let a = setup(dir.path());
        let t = XAppTemplate::builtin();
        let d = render_xapp(&t, &ProvisioningSpec::demo(), &a, loc(dir.path())).unwrap();
        let h = RicHarness::new();
        let handle = register_xapp(&d, &t, &h, dir.path(), false).unwrap();
        assert!(handle.subscription.active);
        assert_eq!(handle.subscription.granularity_ms, 100);
        assert!(register_xapp(&d, &t, &h, dir.path(), false).is_err());
        register_xapp(&d, &t, &h, dir.path(), true).unwrap();
        assert_eq!(h.live_ids(), vec![d.xapp_id.clone()]);

        let h2 = RicHarness::new();
        let mut missing = d.clone();
        missing.model_ref.path = "gone.ormdl".into();
        missing.rendered_body = missing.rendered_body.replace("model.ormdl", "gone.ormdl");
        assert!(register_xapp(&missing, &t, &h2, dir.path(), false).is_err());
        assert!(h2.is_empty());
    }
}
