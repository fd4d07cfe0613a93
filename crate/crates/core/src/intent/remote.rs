//! Chat-completion client for LLM-served intent parsing.
//!
//! Request shape (POST `{base_url}/v1/chat/completions`):
//! `{"model": ..., "temperature": 0, "messages": [{"role": "system", ...}, {"role": "user", ...}]}`.
//! The first choice's `message.content` must be a JSON object: either a
//! [`ProvisioningSpec`] or `{"clarification": ClarificationRequest}`.
//! Anything else is a schema violation; a well-formed spec that fails
//! [`validate_spec`] is rejected too. Neither ever reaches the pipeline.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    validate_spec, ClarificationRequest, IntentBackend, IntentOutcome, IntentText, ProvisioningSpec, SpecError,
};

pub const PROMPT_TEMPLATE_V1: &str = include_str!("../../assets/intent_prompt_v1.txt");
pub const SPEC_SCHEMA: &str = include_str!("../../assets/provisioning_spec.schema.json");
/// Environment variable overriding the configured endpoint URL.
pub const ENDPOINT_ENV: &str = "RICFORGE_INTENT_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteBackendConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_ms: u64,
    /// Replaces the built-in prompt template when set.
    pub prompt_template: Option<PathBuf>,
}

impl Default for RemoteBackendConfig {
    fn default() -> Self {
        RemoteBackendConfig {
            base_url: "http://127.0.0.1:11434".into(),
            model: "llama3.1:8b".into(),
            timeout_ms: 5_000,
            prompt_template: None,
        }
    }
}

impl RemoteBackendConfig {
    /// Apply the `RICFORGE_INTENT_URL` override, if set.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            if !url.trim().is_empty() {
                self.base_url = url.trim().to_string();
            }
        }
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn system_prompt(&self) -> Result<String, RemoteError> {
        let template = match &self.prompt_template {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| RemoteError::Network(format!("cannot read prompt template {}: {e}", path.display())))?,
            None => PROMPT_TEMPLATE_V1.to_string(),
        };
        Ok(template.replace("{{spec_schema}}", SPEC_SCHEMA.trim_end()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("intent backend unreachable: {0}")]
    Network(String),
    #[error("intent backend timed out after {after_ms} ms")]
    Timeout { after_ms: u64 },
    #[error("intent backend returned HTTP {0}")]
    Http(u16),
    #[error("intent backend response violates the spec schema: {0}")]
    SchemaViolation(String),
    #[error("intent backend produced an invalid spec: {0}")]
    InvalidSpec(#[from] SpecError),
}

fn map_transport(err: ureq::Error, timeout_ms: u64) -> RemoteError {
    match err {
        ureq::Error::Timeout(_) => RemoteError::Timeout { after_ms: timeout_ms },
        ureq::Error::Io(e) if matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            RemoteError::Timeout { after_ms: timeout_ms }
        }
        ureq::Error::StatusCode(code) => RemoteError::Http(code),
        other => RemoteError::Network(other.to_string()),
    }
}

fn strip_fences(content: &str) -> &str {
    let t = content.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

/// Interpret the assistant message content.
pub fn interpret_content(content: &str) -> Result<IntentOutcome, RemoteError> {
    let value: Value =
        serde_json::from_str(strip_fences(content)).map_err(|e| RemoteError::SchemaViolation(e.to_string()))?;
    if let Some(clar) = value.get("clarification") {
        if value.as_object().map(|o| o.len()) != Some(1) {
            return Err(RemoteError::SchemaViolation("clarification object carries extra keys".into()));
        }
        let req: ClarificationRequest =
            serde_json::from_value(clar.clone()).map_err(|e| RemoteError::SchemaViolation(e.to_string()))?;
        if req.candidate_interpretations.len() < 2 {
            return Err(RemoteError::SchemaViolation("clarification needs at least two candidates".into()));
        }
        return Ok(IntentOutcome::Clarify(req));
    }
    let spec: ProvisioningSpec =
        serde_json::from_value(value).map_err(|e| RemoteError::SchemaViolation(e.to_string()))?;
    Ok(IntentOutcome::Spec(validate_spec(spec)?))
}

fn request_body(text: &IntentText, cfg: &RemoteBackendConfig) -> Result<Value, RemoteError> {
    Ok(json!({
        "model": cfg.model,
        "temperature": 0,
        "messages": [
            {"role": "system", "content": cfg.system_prompt()?},
            {"role": "user", "content": text.as_str()},
        ],
    }))
}

fn new_agent(cfg: &RemoteBackendConfig) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
        .http_status_as_error(true)
        .build()
        .new_agent()
}

fn call(agent: &ureq::Agent, text: &IntentText, cfg: &RemoteBackendConfig) -> Result<IntentOutcome, RemoteError> {
    let body = serde_json::to_vec(&request_body(text, cfg)?).expect("request serializes");
    let resp = agent
        .post(&cfg.endpoint())
        .content_type("application/json")
        .send(&body[..])
        .map_err(|e| map_transport(e, cfg.timeout_ms))?;
    let raw = resp.into_body().read_to_string().map_err(|e| map_transport(e, cfg.timeout_ms))?;
    let envelope: Value = serde_json::from_str(&raw).map_err(|e| RemoteError::SchemaViolation(e.to_string()))?;
    let content = envelope
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| RemoteError::SchemaViolation("missing choices[0].message.content".into()))?;
    interpret_content(content)
}

/// One-shot remote parse. Returns the outcome and the wall-clock latency.
pub fn remote_parse(text: &IntentText, cfg: &RemoteBackendConfig) -> Result<(IntentOutcome, Duration), RemoteError> {
    let start = Instant::now();
    let agent = new_agent(cfg);
    let outcome = call(&agent, text, cfg)?;
    Ok((outcome, start.elapsed()))
}

/// Remote parser as a pipeline backend.
///
/// Schema violations and invalid specs fall back to a clarification request
/// (the rejected response is kept in `last_rejection`); transport failures
/// propagate as errors.
pub struct RemoteBackend {
    cfg: RemoteBackendConfig,
    agent: Option<ureq::Agent>,
    cold: bool,
    pub last_rejection: Option<String>,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteBackendConfig) -> Self {
        RemoteBackend { cfg, agent: None, cold: false, last_rejection: None }
    }
}

impl IntentBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn parse(&mut self, text: &IntentText) -> Result<IntentOutcome, RemoteError> {
        self.cold = self.agent.is_none();
        let agent = self.agent.get_or_insert_with(|| new_agent(&self.cfg));
        self.last_rejection = None;
        match call(agent, text, &self.cfg) {
            Ok(outcome) => Ok(outcome),
            Err(e @ (RemoteError::SchemaViolation(_) | RemoteError::InvalidSpec(_))) => {
                self.last_rejection = Some(e.to_string());
                Ok(IntentOutcome::Clarify(ClarificationRequest {
                    ambiguous_phrase: text.as_str().trim().to_string(),
                    candidate_interpretations: vec![
                        "predict congestion (monitor only)".into(),
                        "predict congestion and reserve 20% PRBs for edge users".into(),
                    ],
                }))
            }
            Err(e) => Err(e),
        }
    }

    fn last_call_was_cold(&self) -> bool {
        self.cold
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_may_be_fenced() {
        let spec = ProvisioningSpec::demo();
        let fenced = format!("```json\n{}\n```", spec.canonical_json());
        assert_eq!(interpret_content(&fenced).unwrap(), IntentOutcome::Spec(spec));
    }

    #[test]
    fn unknown_fields_are_schema_violations() {
        let mut v: Value = serde_json::from_str(&ProvisioningSpec::demo().canonical_json()).unwrap();
        v["script"] = json!("rm -rf /");
        assert!(matches!(interpret_content(&v.to_string()), Err(RemoteError::SchemaViolation(_))));
        assert!(matches!(interpret_content("not json"), Err(RemoteError::SchemaViolation(_))));
    }

    #[test]
    fn guardrail_applies_to_remote_specs() {
        let mut spec = ProvisioningSpec::demo();
        spec.action.as_mut().unwrap().fraction = 0.75;
        assert!(matches!(interpret_content(&spec.canonical_json()), Err(RemoteError::InvalidSpec(_))));
    }

    #[test]
    fn clarification_needs_two_candidates() {
        let one = r#"{"clarification": {"ambiguous_phrase": "x", "candidate_interpretations": ["a"]}}"#;
        assert!(matches!(interpret_content(one), Err(RemoteError::SchemaViolation(_))));
        let two = r#"{"clarification": {"ambiguous_phrase": "x", "candidate_interpretations": ["a", "b"]}}"#;
        assert!(matches!(interpret_content(two), Ok(IntentOutcome::Clarify(_))));
    }

    #[test]
    fn prompt_embeds_schema() {
        let prompt = RemoteBackendConfig::default().system_prompt().unwrap();
        assert!(prompt.contains("\"title\": \"ProvisioningSpec\""));
        assert!(!prompt.contains("{{spec_schema}}"));
    }
}
