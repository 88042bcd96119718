//! Deterministic provider that answers from a fixed script table.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{GenerationRequest, GenerationResult, ModuleTag, ProviderError, TextGenerator};

/// How an entry is matched against the request's latest user text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Exact(String),
    Substring(String),
    Default,
}

/// Simulated failure attached to an entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptFailure {
    Timeout,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub module_tag: ModuleTag,
    pub matcher: Matcher,
    #[serde(default)]
    pub response: String,
    #[serde(default)]
    pub latency_stub_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<ScriptFailure>,
}

impl ScriptEntry {
    pub fn new(module_tag: ModuleTag, matcher: Matcher, response: impl Into<String>) -> Self {
        Self {
            module_tag,
            matcher,
            response: response.into(),
            latency_stub_ms: 0,
            fail: None,
        }
    }

    pub fn default_for(module_tag: ModuleTag, response: impl Into<String>) -> Self {
        Self::new(module_tag, Matcher::Default, response)
    }

    pub fn with_latency(mut self, ms: u64) -> Self {
        self.latency_stub_ms = ms;
        self
    }

    pub fn failing(mut self, failure: ScriptFailure) -> Self {
        self.fail = Some(failure);
        self
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("second default entry for {0}")]
    DuplicateDefault(ModuleTag),
    #[error("duplicate exact entry for {0}: {1:?}")]
    DuplicateExact(ModuleTag, String),
    #[error("script line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read script file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default)]
struct TagTable {
    exact: HashMap<String, ScriptEntry>,
    substring: Vec<ScriptEntry>,
    default: Option<ScriptEntry>,
}

/// Immutable after construction, so it can be shared freely across tasks.
#[derive(Debug)]
pub struct ScriptedProvider {
    id: String,
    tables: HashMap<ModuleTag, TagTable>,
}

impl ScriptedProvider {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, ScriptError> {
        let mut tables: HashMap<ModuleTag, TagTable> = HashMap::new();
        for entry in entries {
            let table = tables.entry(entry.module_tag).or_default();
            match &entry.matcher {
                Matcher::Exact(key) => {
                    if table.exact.contains_key(key) {
                        return Err(ScriptError::DuplicateExact(entry.module_tag, key.clone()));
                    }
                    table.exact.insert(key.clone(), entry);
                }
                Matcher::Substring(_) => table.substring.push(entry),
                Matcher::Default => {
                    if table.default.is_some() {
                        return Err(ScriptError::DuplicateDefault(entry.module_tag));
                    }
                    table.default = Some(entry);
                }
            }
        }
        Ok(Self {
            id: "scripted".to_string(),
            tables,
        })
    }

    pub fn from_jsonl(body: &str) -> Result<Self, ScriptError> {
        let mut entries = Vec::new();
        for (idx, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| ScriptError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Self::new(entries)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    /// Most specific entry: exact, then longest substring (first registered on ties), then default.
    pub fn resolve(&self, req: &GenerationRequest) -> Option<&ScriptEntry> {
        let table = self.tables.get(&req.module_tag)?;
        let input = req.user_input();
        if let Some(text) = input {
            if let Some(entry) = table.exact.get(text) {
                return Some(entry);
            }
            let mut best: Option<(usize, &ScriptEntry)> = None;
            for entry in &table.substring {
                if let Matcher::Substring(pat) = &entry.matcher {
                    if text.contains(pat.as_str()) && best.is_none_or(|(len, _)| len < pat.len()) {
                        best = Some((pat.len(), entry));
                    }
                }
            }
            if let Some((_, entry)) = best {
                return Some(entry);
            }
        }
        table.default.as_ref()
    }
}

#[async_trait]
impl TextGenerator for ScriptedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        let started = Instant::now();
        let entry = self.resolve(req).ok_or_else(|| ProviderError::NoScriptMatch {
            tag: req.module_tag,
            input: req.user_input().map(str::to_string),
        })?;
        if entry.latency_stub_ms > 0 {
            tokio::time::sleep(Duration::from_millis(entry.latency_stub_ms)).await;
        }
        match entry.fail {
            Some(ScriptFailure::Timeout) => {
                return Err(ProviderError::Timeout(Duration::from_millis(entry.latency_stub_ms)))
            }
            Some(ScriptFailure::Rejected) => {
                return Err(ProviderError::Rejected("scripted rejection".into()))
            }
            None => {}
        }
        Ok(GenerationResult {
            text: entry.response.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
            provider_id: self.id.clone(),
            truncated: false,
        })
    }
}
