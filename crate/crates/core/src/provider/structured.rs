//! Parsing model output against a registered schema, with one deterministic repair pass.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SchemaId;
use crate::awareness::{OtherState, SelfState};
use crate::memory::{Category, Owner};

/// A memory piece as proposed by the extraction model, before ids are assigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedPiece {
    pub owner: Owner,
    pub category: Category,
    pub statement: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StructuredOutput {
    SelfState(SelfState),
    OtherState(OtherState),
    MemoryPieces(Vec<ExtractedPiece>),
    Queries(Vec<String>),
    Coverage(BTreeMap<String, bool>),
}

impl StructuredOutput {
    pub fn schema(&self) -> SchemaId {
        match self {
            StructuredOutput::SelfState(_) => SchemaId::SelfState,
            StructuredOutput::OtherState(_) => SchemaId::OtherState,
            StructuredOutput::MemoryPieces(_) => SchemaId::MemoryPieces,
            StructuredOutput::Queries(_) => SchemaId::Queries,
            StructuredOutput::Coverage(_) => SchemaId::Coverage,
        }
    }

    /// Canonical wire form, the inverse of [`parse_structured`].
    pub fn serialize(&self) -> String {
        let value = match self {
            StructuredOutput::SelfState(s) => serde_json::to_value(s),
            StructuredOutput::OtherState(s) => serde_json::to_value(s),
            StructuredOutput::MemoryPieces(p) => serde_json::to_value(p),
            StructuredOutput::Queries(q) => Ok(serde_json::json!({ "queries": q })),
            StructuredOutput::Coverage(c) => Ok(serde_json::json!({ "coverage": c })),
        };
        value.expect("structured output serializes").to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaViolation {
    pub schema: SchemaId,
    /// Missing or invalid field paths; empty when the text was not JSON at all.
    pub fields: Vec<String>,
    pub detail: String,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.fields.is_empty() {
            write!(f, "schema {:?} violated: {}", self.schema, self.detail)
        } else {
            write!(
                f,
                "schema {:?} violated at [{}]: {}",
                self.schema,
                self.fields.join(", "),
                self.detail
            )
        }
    }
}

impl std::error::Error for SchemaViolation {}

/// Required keys of each object schema, published alongside the schema documents.
pub fn required_fields(schema: SchemaId) -> &'static [&'static str] {
    match schema {
        SchemaId::SelfState => &[
            "satisfaction",
            "opinion",
            "interesting_topic",
            "plan",
            "current_emotion",
            "next_emotion",
            "tone_style",
        ],
        SchemaId::OtherState => &[
            "meta_topic",
            "user_satisfaction",
            "candidate_topics",
            "task_oriented",
            "user_emotion",
            "natural_response_emotion",
        ],
        SchemaId::MemoryPieces => &["owner", "category", "statement"],
        SchemaId::Queries => &["queries"],
        SchemaId::Coverage => &["coverage"],
    }
}

const ENUM_KEYS: [&str; 4] = ["plan", "label", "owner", "category"];
const EMOTION_KEYS: [&str; 4] = [
    "current_emotion",
    "next_emotion",
    "user_emotion",
    "natural_response_emotion",
];

pub fn parse_structured(text: &str, schema: SchemaId) -> Result<StructuredOutput, SchemaViolation> {
    let first = match serde_json::from_str::<Value>(text.trim()) {
        Ok(value) => match from_value(value, schema) {
            Ok(out) => return Ok(out),
            Err(v) => v,
        },
        Err(e) => SchemaViolation {
            schema,
            fields: Vec::new(),
            detail: format!("not JSON: {e}"),
        },
    };
    match repair(text, schema) {
        Some(value) => from_value(value, schema),
        None => Err(first),
    }
}

/// Strip code fences, cut out the first balanced JSON value, normalize enum spelling.
fn repair(text: &str, schema: SchemaId) -> Option<Value> {
    let unfenced = strip_fences(text);
    let prefer_array = schema == SchemaId::MemoryPieces;
    let candidate = extract_balanced(&unfenced, prefer_array)?;
    let mut value: Value = serde_json::from_str(candidate).ok()?;
    coerce_enums(&mut value);
    Some(value)
}

fn strip_fences(text: &str) -> String {
    let trimmed = text.trim();
    let Some(start) = trimmed.find("```") else {
        return trimmed.to_string();
    };
    let after = &trimmed[start + 3..];
    // drop an info string such as `json`
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    match body.find("```") {
        Some(end) => body[..end].trim().to_string(),
        None => body.trim().to_string(),
    }
}

fn extract_balanced(text: &str, prefer_array: bool) -> Option<&str> {
    let obj = text.find('{');
    let arr = text.find('[');
    let start = match (obj, arr) {
        (Some(o), Some(a)) if prefer_array => a.min(o),
        (Some(o), _) => o,
        (None, Some(a)) if prefer_array => a,
        _ => return None,
    };
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn normalize_enum(s: &str) -> String {
    s.trim().to_lowercase().replace([' ', '-'], "_")
}

fn coerce_enums(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (key, v) in map.iter_mut() {
                let is_enum = ENUM_KEYS.contains(&key.as_str()) || EMOTION_KEYS.contains(&key.as_str());
                match v {
                    Value::String(s) if is_enum => *s = normalize_enum(s),
                    _ => coerce_enums(v),
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(coerce_enums),
        _ => {}
    }
}

fn typed<T: DeserializeOwned>(value: Value, schema: SchemaId, prefix: &str) -> Result<T, SchemaViolation> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { prefix.trim_end_matches('.').to_string() } else { format!("{prefix}{path}") };
        SchemaViolation {
            schema,
            fields: vec![field],
            detail: e.inner().to_string(),
        }
    })
}

fn missing(map: &serde_json::Map<String, Value>, schema: SchemaId, prefix: &str) -> Vec<String> {
    required_fields(schema)
        .iter()
        .filter(|k| map.get(**k).is_none_or(Value::is_null))
        .map(|k| format!("{prefix}{k}"))
        .collect()
}

fn violation(schema: SchemaId, fields: Vec<String>, detail: &str) -> SchemaViolation {
    SchemaViolation {
        schema,
        fields,
        detail: detail.to_string(),
    }
}

fn from_value(value: Value, schema: SchemaId) -> Result<StructuredOutput, SchemaViolation> {
    match schema {
        SchemaId::SelfState | SchemaId::OtherState => {
            let Value::Object(map) = &value else {
                return Err(violation(schema, Vec::new(), "expected a JSON object"));
            };
            let absent = missing(map, schema, "");
            if !absent.is_empty() {
                return Err(violation(schema, absent, "missing required fields"));
            }
            if schema == SchemaId::SelfState {
                let state: SelfState = typed(value, schema, "")?;
                let bad = state.violations();
                if !bad.is_empty() {
                    return Err(violation(schema, bad, "invariant violated"));
                }
                Ok(StructuredOutput::SelfState(state))
            } else {
                let state: OtherState = typed(value, schema, "")?;
                let bad = state.violations();
                if !bad.is_empty() {
                    return Err(violation(schema, bad, "invariant violated"));
                }
                Ok(StructuredOutput::OtherState(state))
            }
        }
        SchemaId::MemoryPieces => {
            let items = match value {
                Value::Array(items) => items,
                Value::Object(mut map) => match map.remove("pieces") {
                    Some(Value::Array(items)) => items,
                    _ => return Err(violation(schema, vec!["pieces".into()], "expected an array of pieces")),
                },
                _ => return Err(violation(schema, Vec::new(), "expected an array of pieces")),
            };
            let mut pieces = Vec::with_capacity(items.len());
            for (i, item) in items.into_iter().enumerate() {
                let prefix = format!("[{i}].");
                let Value::Object(map) = &item else {
                    return Err(violation(schema, vec![format!("[{i}]")], "expected an object"));
                };
                let absent = missing(map, schema, &prefix);
                if !absent.is_empty() {
                    return Err(violation(schema, absent, "missing required fields"));
                }
                let piece: ExtractedPiece = typed(item, schema, &prefix)?;
                if piece.statement.trim().is_empty() {
                    return Err(violation(schema, vec![format!("{prefix}statement")], "empty statement"));
                }
                pieces.push(piece);
            }
            Ok(StructuredOutput::MemoryPieces(pieces))
        }
        SchemaId::Queries => {
            let list = match value {
                Value::Array(_) => value,
                Value::Object(mut map) => match map.remove("queries") {
                    Some(v) if !v.is_null() => v,
                    _ => return Err(violation(schema, vec!["queries".into()], "missing required fields")),
                },
                _ => return Err(violation(schema, Vec::new(), "expected a queries object")),
            };
            let queries: Vec<String> = typed(list, schema, "queries")?;
            Ok(StructuredOutput::Queries(queries))
        }
        SchemaId::Coverage => {
            let map = match value {
                Value::Object(mut map) => match map.remove("coverage") {
                    Some(v @ Value::Object(_)) => v,
                    Some(_) => return Err(violation(schema, vec!["coverage".into()], "expected an object")),
                    None if map.values().all(Value::is_boolean) => Value::Object(map),
                    None => return Err(violation(schema, vec!["coverage".into()], "missing required fields")),
                },
                _ => return Err(violation(schema, Vec::new(), "expected a coverage object")),
            };
            let coverage: BTreeMap<String, bool> = typed(map, schema, "coverage")?;
            Ok(StructuredOutput::Coverage(coverage))
        }
    }
}
