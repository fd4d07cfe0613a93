//! xApp templates: a text body with `{{slot}}` markers and a JSON slot
//! manifest giving each slot's type, allowed range, and JSON pointer into
//! the rendered body.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SynthesisError;

pub const BUILTIN_BODY: &str = include_str!("../../templates/congestion_reserve_v1.tmpl");
pub const BUILTIN_SLOTS: &str = include_str!("../../templates/congestion_reserve_v1.slots.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Charset {
    /// Lowercase hex digits.
    Hex,
    /// `[a-z0-9_-]`
    Identifier,
}

impl Charset {
    fn admits(self, c: char) -> bool {
        match self {
            Charset::Hex => matches!(c, '0'..='9' | 'a'..='f'),
            Charset::Identifier => matches!(c, 'a'..='z' | '0'..='9' | '_' | '-'),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SlotRule {
    String { charset: Charset, max_len: usize },
    /// Relative path of `[A-Za-z0-9._-]` components ending in `suffix`.
    Path { suffix: String },
    Number {
        min: f64,
        max: f64,
        #[serde(default)]
        min_exclusive: bool,
    },
    Integer { min: i64, max: i64 },
    Enum { values: Vec<String> },
    /// Non-empty comma-separated list of distinct allowed values.
    EnumList { values: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    /// Where the rendered value lives in the parsed body.
    pub pointer: String,
    #[serde(flatten)]
    pub rule: SlotRule,
}

/// A typed slot value.
#[derive(Debug, Clone, PartialEq)]
pub enum SlotValue {
    Str(String),
    Num(f64),
    Int(i64),
    List(Vec<String>),
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotValue::Str(s) => f.write_str(s),
            SlotValue::Num(v) => write!(f, "{v}"),
            SlotValue::Int(v) => write!(f, "{v}"),
            SlotValue::List(v) => f.write_str(&v.join(",")),
        }
    }
}

pub fn is_safe_relative_path(p: &str) -> bool {
    !p.is_empty()
        && p.split('/').all(|c| {
            !c.is_empty() && c != "." && c != ".." && c.chars().all(|ch| ch.is_ascii_alphanumeric() || "._-".contains(ch))
        })
}

impl SlotRule {
    /// Check a value against the rule; the message names the problem.
    pub fn check(&self, value: &SlotValue) -> Result<(), String> {
        match (self, value) {
            (SlotRule::String { charset, max_len }, SlotValue::Str(s)) => {
                if s.is_empty() || s.len() > *max_len {
                    return Err(format!("length {} outside 1..={max_len}", s.len()));
                }
                match s.chars().find(|&c| !charset.admits(c)) {
                    Some(c) => Err(format!("character {c:?} not allowed")),
                    None => Ok(()),
                }
            }
            (SlotRule::Path { suffix }, SlotValue::Str(p)) => {
                if !is_safe_relative_path(p) {
                    Err(format!("{p:?} is not a plain relative path"))
                } else if !p.ends_with(suffix.as_str()) {
                    Err(format!("{p:?} does not end in {suffix}"))
                } else {
                    Ok(())
                }
            }
            (SlotRule::Number { min, max, min_exclusive }, SlotValue::Num(v)) => {
                let above = if *min_exclusive { *v > *min } else { *v >= *min };
                if v.is_finite() && above && *v <= *max {
                    Ok(())
                } else {
                    let open = if *min_exclusive { "(" } else { "[" };
                    Err(format!("{v} outside {open}{min}, {max}]"))
                }
            }
            (SlotRule::Integer { min, max }, SlotValue::Int(v)) => {
                if (*min..=*max).contains(v) {
                    Ok(())
                } else {
                    Err(format!("{v} outside [{min}, {max}]"))
                }
            }
            (SlotRule::Enum { values }, SlotValue::Str(s)) => {
                if values.contains(s) {
                    Ok(())
                } else {
                    Err(format!("{s:?} not one of {values:?}"))
                }
            }
            (SlotRule::EnumList { values }, SlotValue::List(items)) => {
                if items.is_empty() {
                    return Err("empty list".into());
                }
                let distinct: BTreeSet<&String> = items.iter().collect();
                if distinct.len() != items.len() {
                    return Err("duplicate entries".into());
                }
                match items.iter().find(|i| !values.contains(i)) {
                    Some(bad) => Err(format!("{bad:?} not one of {values:?}")),
                    None => Ok(()),
                }
            }
            (rule, value) => Err(format!("{value:?} has the wrong type for {rule:?}")),
        }
    }

    /// Read a value of this rule's type back out of the parsed body.
    pub fn extract(&self, json: &Value) -> Result<SlotValue, String> {
        match self {
            SlotRule::String { .. } | SlotRule::Path { .. } | SlotRule::Enum { .. } => {
                json.as_str().map(|s| SlotValue::Str(s.to_string())).ok_or_else(|| "expected a string".into())
            }
            SlotRule::EnumList { .. } => json
                .as_str()
                .map(|s| SlotValue::List(s.split(',').map(str::to_string).collect()))
                .ok_or_else(|| "expected a comma-separated string".into()),
            SlotRule::Number { .. } => json.as_f64().map(SlotValue::Num).ok_or_else(|| "expected a number".into()),
            SlotRule::Integer { .. } => json.as_i64().map(SlotValue::Int).ok_or_else(|| "expected an integer".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SlotManifest {
    template_id: String,
    version: String,
    slots: Vec<SlotSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XAppTemplate {
    pub template_id: String,
    pub version: String,
    pub slots: Vec<SlotSpec>,
    pub body: String,
}

/// Every `{{name}}` marker in `text`, in order of appearance. An opening
/// `{{` without a closing `}}` is reported as a marker named by the rest of
/// the text.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                out.push(after[..close].trim().to_string());
                rest = &after[close + 2..];
            }
            None => {
                out.push(after.chars().take(32).collect());
                break;
            }
        }
    }
    out
}

impl XAppTemplate {
    /// The shipped congestion-predict-and-reserve template.
    pub fn builtin() -> Self {
        Self::from_strs(BUILTIN_BODY, BUILTIN_SLOTS).expect("built-in template is well-formed")
    }

    pub fn from_files(body: &Path, slots: &Path) -> Result<Self, SynthesisError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| SynthesisError::Io { path: p.display().to_string(), source })
        };
        Self::from_strs(&read(body)?, &read(slots)?)
    }

    /// Parse and check that body markers and manifest slots correspond one
    /// to one.
    pub fn from_strs(body: &str, slots_json: &str) -> Result<Self, SynthesisError> {
        let manifest: SlotManifest =
            serde_json::from_str(slots_json).map_err(|e| SynthesisError::Template(format!("slot manifest: {e}")))?;
        let mut names = BTreeSet::new();
        for s in &manifest.slots {
            if !names.insert(s.name.as_str()) {
                return Err(SynthesisError::Template(format!("slot {} declared twice", s.name)));
            }
        }
        let markers = placeholders(body);
        let mut seen = BTreeSet::new();
        for m in &markers {
            if !names.contains(m.as_str()) {
                return Err(SynthesisError::Template(format!("marker {{{{{m}}}}} has no slot declaration")));
            }
            if !seen.insert(m.as_str()) {
                return Err(SynthesisError::Template(format!("marker {{{{{m}}}}} appears more than once")));
            }
        }
        if let Some(unused) = names.iter().find(|n| !seen.contains(*n)) {
            return Err(SynthesisError::Template(format!("slot {unused} does not appear in the body")));
        }
        Ok(XAppTemplate { template_id: manifest.template_id, version: manifest.version, slots: manifest.slots, body: body.to_string() })
    }

    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.name == name)
    }
}
