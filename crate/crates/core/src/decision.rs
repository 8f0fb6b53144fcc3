//! The decision object: a structured candidate action awaiting a verdict.
//!
//! A decision carries the proposed operation, its context, target, scope
//! and timing, plus the decision class that selects a constraint set and the
//! named features consumed by the scoring baseline. Decisions are parsed
//! strictly: unknown top-level keys, empty identifiers, unparseable
//! timestamps and non-finite features are all rejected with exactly one
//! typed error.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, FixedOffset, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::canonical;

const TOP_LEVEL_KEYS: [&str; 8] = [
    "context",
    "decision_class",
    "features",
    "metadata",
    "operation",
    "scope",
    "target",
    "timing",
];

/// Marker substituted for bare `NaN` / `Infinity` tokens while diagnosing
/// input that is not valid JSON.
const NON_FINITE_SENTINEL: &str = "\u{0}rta-non-finite\u{0}";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("MALFORMED_JSON: {0}")]
    MalformedJson(String),
    #[error("MISSING_FIELD: {0}")]
    MissingField(String),
    #[error("UNKNOWN_FIELD: {0}")]
    UnknownField(String),
    #[error("WRONG_TYPE: {field} must be {expected}")]
    WrongType { field: String, expected: &'static str },
    #[error("EMPTY_FIELD: {0}")]
    EmptyField(String),
    #[error("BAD_TIMESTAMP: {0}")]
    BadTimestamp(String),
    #[error("NON_FINITE_FEATURE: {0}")]
    NonFiniteFeature(String),
}

impl DecisionError {
    pub fn code(&self) -> &'static str {
        match self {
            DecisionError::MalformedJson(_) => "MALFORMED_JSON",
            DecisionError::MissingField(_) => "MISSING_FIELD",
            DecisionError::UnknownField(_) => "UNKNOWN_FIELD",
            DecisionError::WrongType { .. } => "WRONG_TYPE",
            DecisionError::EmptyField(_) => "EMPTY_FIELD",
            DecisionError::BadTimestamp(_) => "BAD_TIMESTAMP",
            DecisionError::NonFiniteFeature(_) => "NON_FINITE_FEATURE",
        }
    }
}

/// An RFC-3339 instant that remembers its original spelling.
///
/// Equality and serialization use the original text so canonical forms
/// reproduce the input exactly; ordering and arithmetic use the instant.
#[derive(Clone)]
pub struct Timestamp {
    raw: String,
    instant: DateTime<FixedOffset>,
}

impl Timestamp {
    pub fn parse(raw: &str) -> Result<Self, chrono::ParseError> {
        let instant = DateTime::parse_from_rfc3339(raw)?;
        Ok(Timestamp {
            raw: raw.to_owned(),
            instant,
        })
    }

    pub fn from_utc(at: DateTime<Utc>) -> Self {
        Timestamp {
            raw: at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            instant: at.fixed_offset(),
        }
    }

    pub fn now() -> Self {
        Self::from_utc(Utc::now())
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn instant(&self) -> DateTime<FixedOffset> {
        self.instant
    }

    /// Seconds elapsed from `self` to `later` (negative when `later` is earlier).
    pub fn seconds_until(&self, later: &Timestamp) -> f64 {
        let delta = later.instant.signed_duration_since(self.instant);
        match delta.num_microseconds() {
            Some(us) => us as f64 / 1e6,
            None => delta.num_seconds() as f64,
        }
    }
}

impl PartialEq for Timestamp {
    fn eq(&self, other: &Self) -> bool {
        self.raw == other.raw
    }
}

impl Eq for Timestamp {}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Timestamp({})", self.raw)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl std::str::FromStr for Timestamp {
    type Err = chrono::ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Timestamp::parse(s)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Timestamp::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// A candidate executable decision.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionObject {
    pub decision_class: String,
    pub operation: String,
    pub context: BTreeMap<String, Value>,
    pub target: String,
    pub scope: String,
    pub timing: Timestamp,
    pub features: BTreeMap<String, f64>,
    /// Provenance only; hashed, never visible to constraint expressions.
    pub metadata: BTreeMap<String, String>,
}

/// Canonical UTF-8 JSON bytes of a decision.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalForm(Vec<u8>);

impl CanonicalForm {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("canonical form is UTF-8")
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
}

/// Parse and validate a decision from raw bytes.
pub fn parse_decision(input: &[u8]) -> Result<DecisionObject, DecisionError> {
    let text = std::str::from_utf8(input)
        .map_err(|e| DecisionError::MalformedJson(format!("invalid UTF-8: {e}")))?;
    match serde_json::from_str::<Value>(text) {
        Ok(value) => DecisionObject::from_value(&value),
        Err(err) => Err(diagnose_invalid_json(text, err)),
    }
}

/// Distinguish "a feature was written as NaN/Infinity" from other syntax
/// errors so the caller gets the more specific diagnosis.
fn diagnose_invalid_json(text: &str, err: serde_json::Error) -> DecisionError {
    let malformed = DecisionError::MalformedJson(err.to_string());
    let Some(patched) = quote_non_finite_tokens(text) else {
        return malformed;
    };
    let Ok(Value::Object(top)) = serde_json::from_str::<Value>(&patched) else {
        return malformed;
    };
    if let Some(Value::Object(features)) = top.get("features") {
        for (name, value) in features {
            if value.as_str() == Some(NON_FINITE_SENTINEL) {
                return DecisionError::NonFiniteFeature(name.clone());
            }
        }
    }
    malformed
}

/// Replace bare `NaN`, `Infinity` and `-Infinity` tokens outside string
/// literals with a quoted sentinel. Returns `None` when there were none.
fn quote_non_finite_tokens(text: &str) -> Option<String> {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len() + 16);
    let mut in_string = false;
    let mut escaped = false;
    let mut replaced = false;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
        } else if b == b'"' {
            in_string = true;
        } else {
            let rest = &text[i..];
            let token = ["-Infinity", "+Infinity", "Infinity", "NaN"]
                .into_iter()
                .find(|t| rest.starts_with(t));
            if let Some(token) = token {
                out.push('"');
                out.push_str(&NON_FINITE_SENTINEL.replace('\u{0}', "\\u0000"));
                out.push('"');
                i += token.len();
                replaced = true;
                continue;
            }
        }
        // Advance by whole UTF-8 characters.
        let ch = text[i..].chars().next().expect("in bounds");
        out.push(ch);
        i += ch.len_utf8();
    }
    replaced.then_some(out)
}

fn required_string(
    top: &Map<String, Value>,
    field: &str,
    non_empty: bool,
) -> Result<String, DecisionError> {
    match top.get(field) {
        None => Err(DecisionError::MissingField(field.to_owned())),
        Some(Value::String(s)) if non_empty && s.is_empty() => {
            Err(DecisionError::EmptyField(field.to_owned()))
        }
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(DecisionError::WrongType {
            field: field.to_owned(),
            expected: "a string",
        }),
    }
}

fn optional_object<'a>(
    top: &'a Map<String, Value>,
    field: &str,
) -> Result<Option<&'a Map<String, Value>>, DecisionError> {
    match top.get(field) {
        None => Ok(None),
        Some(Value::Object(m)) => Ok(Some(m)),
        Some(_) => Err(DecisionError::WrongType {
            field: field.to_owned(),
            expected: "an object",
        }),
    }
}

fn is_non_finite_spelling(s: &str) -> bool {
    matches!(
        s.to_ascii_lowercase().as_str(),
        "nan" | "inf" | "+inf" | "-inf" | "infinity" | "+infinity" | "-infinity"
    ) || s == NON_FINITE_SENTINEL
}

impl DecisionObject {
    /// Validate an already-parsed JSON value tree.
    pub fn from_value(value: &Value) -> Result<Self, DecisionError> {
        let Value::Object(top) = value else {
            return Err(DecisionError::MalformedJson(
                "top-level value must be an object".to_owned(),
            ));
        };
        if let Some(unknown) = top.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
            return Err(DecisionError::UnknownField(unknown.clone()));
        }

        let decision_class = required_string(top, "decision_class", true)?;
        let operation = required_string(top, "operation", true)?;
        let target = required_string(top, "target", true)?;
        let scope = required_string(top, "scope", false)?;
        let timing_raw = required_string(top, "timing", false)?;
        let timing = Timestamp::parse(&timing_raw)
            .map_err(|e| DecisionError::BadTimestamp(format!("{timing_raw:?}: {e}")))?;

        let context = optional_object(top, "context")?
            .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default();

        let mut features = BTreeMap::new();
        if let Some(m) = optional_object(top, "features")? {
            for (name, v) in m {
                let x = match v {
                    Value::Number(n) => n.as_f64().filter(|x| x.is_finite()),
                    Value::String(s) if is_non_finite_spelling(s) => None,
                    _ => {
                        return Err(DecisionError::WrongType {
                            field: format!("features.{name}"),
                            expected: "a number",
                        })
                    }
                };
                let x = x.ok_or_else(|| DecisionError::NonFiniteFeature(name.clone()))?;
                features.insert(name.clone(), x);
            }
        }

        let mut metadata = BTreeMap::new();
        if let Some(m) = optional_object(top, "metadata")? {
            for (k, v) in m {
                let Value::String(s) = v else {
                    return Err(DecisionError::WrongType {
                        field: format!("metadata.{k}"),
                        expected: "a string",
                    });
                };
                metadata.insert(k.clone(), s.clone());
            }
        }

        Ok(DecisionObject {
            decision_class,
            operation,
            context,
            target,
            scope,
            timing,
            features,
            metadata,
        })
    }

    /// The full JSON value tree, including empty maps.
    pub fn to_value(&self) -> Value {
        let mut top = Map::new();
        top.insert("decision_class".into(), Value::String(self.decision_class.clone()));
        top.insert("operation".into(), Value::String(self.operation.clone()));
        top.insert(
            "context".into(),
            Value::Object(self.context.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
        );
        top.insert("target".into(), Value::String(self.target.clone()));
        top.insert("scope".into(), Value::String(self.scope.clone()));
        top.insert("timing".into(), Value::String(self.timing.as_str().to_owned()));
        top.insert(
            "features".into(),
            Value::Object(
                self.features
                    .iter()
                    .map(|(k, x)| (k.clone(), Value::from(*x)))
                    .collect(),
            ),
        );
        top.insert(
            "metadata".into(),
            Value::Object(
                self.metadata
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                    .collect(),
            ),
        );
        Value::Object(top)
    }
}

impl Serialize for DecisionObject {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DecisionObject {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        DecisionObject::from_value(&value).map_err(serde::de::Error::custom)
    }
}

pub fn canonicalize(d: &DecisionObject) -> CanonicalForm {
    CanonicalForm(canonical::to_canonical_string(&d.to_value()).into_bytes())
}

/// SHA-256 over the canonical form, lowercase hex.
pub fn decision_hash(d: &DecisionObject) -> String {
    canonical::sha256_hex(canonicalize(d).as_bytes())
}
