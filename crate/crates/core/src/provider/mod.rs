//! Text generation contract shared by every module, with scripted and remote backends.

mod remote;
mod scripted;
pub mod structured;

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use remote::{RemoteConfig, RemoteProvider};
pub use scripted::{Matcher, ScriptEntry, ScriptError, ScriptFailure, ScriptedProvider};
pub use structured::{parse_structured, SchemaViolation, StructuredOutput};

/// Which module issued a request. Determines the expected output schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleTag {
    SelfAwareness,
    OtherAwareness,
    MemoryExtract,
    QueryRewrite,
    KnowledgeSummarize,
    QuickResponse,
    AnalyticResponse,
    Rethink,
}

impl ModuleTag {
    pub const ALL: [ModuleTag; 8] = [
        ModuleTag::SelfAwareness,
        ModuleTag::OtherAwareness,
        ModuleTag::MemoryExtract,
        ModuleTag::QueryRewrite,
        ModuleTag::KnowledgeSummarize,
        ModuleTag::QuickResponse,
        ModuleTag::AnalyticResponse,
        ModuleTag::Rethink,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleTag::SelfAwareness => "self_awareness",
            ModuleTag::OtherAwareness => "other_awareness",
            ModuleTag::MemoryExtract => "memory_extract",
            ModuleTag::QueryRewrite => "query_rewrite",
            ModuleTag::KnowledgeSummarize => "knowledge_summarize",
            ModuleTag::QuickResponse => "quick_response",
            ModuleTag::AnalyticResponse => "analytic_response",
            ModuleTag::Rethink => "rethink",
        }
    }

    pub fn parse(s: &str) -> Option<ModuleTag> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn schema(self) -> Option<SchemaId> {
        match self {
            ModuleTag::SelfAwareness => Some(SchemaId::SelfState),
            ModuleTag::OtherAwareness => Some(SchemaId::OtherState),
            ModuleTag::MemoryExtract => Some(SchemaId::MemoryPieces),
            ModuleTag::QueryRewrite => Some(SchemaId::Queries),
            ModuleTag::Rethink => Some(SchemaId::Coverage),
            ModuleTag::KnowledgeSummarize
            | ModuleTag::QuickResponse
            | ModuleTag::AnalyticResponse => None,
        }
    }

    /// Analysis is kept stable, expression varied.
    pub fn default_temperature(self) -> f32 {
        match self {
            ModuleTag::QuickResponse | ModuleTag::AnalyticResponse => 0.8,
            _ => 0.2,
        }
    }

    pub fn default_max_output(self) -> u32 {
        match self {
            ModuleTag::QuickResponse => 128,
            ModuleTag::AnalyticResponse | ModuleTag::KnowledgeSummarize => 512,
            _ => 768,
        }
    }
}

impl fmt::Display for ModuleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    SelfState,
    OtherState,
    MemoryPieces,
    Queries,
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub label: String,
    pub text: String,
}

impl ContextBlock {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            text: text.into(),
        }
    }
}

/// Context block labels used across modules.
pub mod labels {
    pub const PERSONA: &str = "persona";
    pub const WINDOW: &str = "window";
    pub const USER_INPUT: &str = "user_input";
    pub const SELF_STATE: &str = "self_state";
    pub const OTHER_STATE: &str = "other_state";
    pub const KNOWLEDGE: &str = "knowledge";
    pub const MEMORY: &str = "memory";
    pub const TURN_MESSAGES: &str = "turn_messages";
    pub const REQUIREMENTS: &str = "requirements";
    pub const SNIPPETS: &str = "snippets";
    pub const PHASE: &str = "phase";
    pub const PERSPECTIVE: &str = "perspective";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub module_tag: ModuleTag,
    pub system_instructions: String,
    pub context_blocks: Vec<ContextBlock>,
    pub expected_schema: Option<SchemaId>,
    pub max_output_units: u32,
    pub temperature_hint: f32,
}

impl GenerationRequest {
    pub fn new(module_tag: ModuleTag, system_instructions: impl Into<String>) -> Self {
        Self {
            module_tag,
            system_instructions: system_instructions.into(),
            context_blocks: Vec::new(),
            expected_schema: module_tag.schema(),
            max_output_units: module_tag.default_max_output(),
            temperature_hint: module_tag.default_temperature(),
        }
    }

    pub fn with_block(mut self, label: impl Into<String>, text: impl Into<String>) -> Self {
        self.context_blocks.push(ContextBlock::new(label, text));
        self
    }

    pub fn block(&self, label: &str) -> Option<&str> {
        self.context_blocks
            .iter()
            .find(|b| b.label == label)
            .map(|b| b.text.as_str())
    }

    pub fn has_block(&self, label: &str) -> bool {
        self.block(label).is_some()
    }

    pub fn block_labels(&self) -> Vec<String> {
        self.context_blocks.iter().map(|b| b.label.clone()).collect()
    }

    /// Text of the latest user message carried by the request, used for script matching.
    pub fn user_input(&self) -> Option<&str> {
        self.block(labels::USER_INPUT)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub latency_ms: u64,
    pub provider_id: String,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("provider timed out after {0:?}")]
    Timeout(Duration),
    #[error("provider rejected request: {0}")]
    Rejected(String),
    #[error("no script entry for {tag} (input {input:?})")]
    NoScriptMatch { tag: ModuleTag, input: Option<String> },
}

#[async_trait]
pub trait TextGenerator: Send + Sync {
    fn id(&self) -> &str;

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, ProviderError>;
}

#[async_trait]
impl<T: TextGenerator + ?Sized> TextGenerator for Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        (**self).generate(req).await
    }
}

/// Wraps a provider and keeps every request it sees, in issue order.
pub struct RecordingProvider<P> {
    inner: P,
    log: Mutex<Vec<GenerationRequest>>,
}

impl<P: TextGenerator> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn take_requests(&self) -> Vec<GenerationRequest> {
        std::mem::take(&mut *self.log.lock().unwrap())
    }

    pub fn count(&self, tag: ModuleTag) -> usize {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.module_tag == tag)
            .count()
    }
}

#[async_trait]
impl<P: TextGenerator> TextGenerator for RecordingProvider<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        self.log.lock().unwrap().push(req.clone());
        self.inner.generate(req).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_schema_mapping_is_fixed() {
        assert_eq!(ModuleTag::SelfAwareness.schema(), Some(SchemaId::SelfState));
        assert_eq!(ModuleTag::OtherAwareness.schema(), Some(SchemaId::OtherState));
        assert_eq!(ModuleTag::Rethink.schema(), Some(SchemaId::Coverage));
        assert_eq!(ModuleTag::QuickResponse.schema(), None);
        for tag in ModuleTag::ALL {
            assert_eq!(ModuleTag::parse(tag.as_str()), Some(tag));
            let req = GenerationRequest::new(tag, "");
            assert_eq!(req.expected_schema, tag.schema());
        }
    }

    #[test]
    fn temperature_defaults() {
        assert_eq!(GenerationRequest::new(ModuleTag::OtherAwareness, "").temperature_hint, 0.2);
        assert_eq!(GenerationRequest::new(ModuleTag::MemoryExtract, "").temperature_hint, 0.2);
        assert_eq!(GenerationRequest::new(ModuleTag::QuickResponse, "").temperature_hint, 0.8);
        assert_eq!(GenerationRequest::new(ModuleTag::AnalyticResponse, "").temperature_hint, 0.8);
    }
}
