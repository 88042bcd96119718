//! Provider plus templates: the handle every module uses to issue calls.

use std::sync::Arc;

use crate::provider::{ContextBlock, GenerationResult, ModuleTag, ProviderError, TextGenerator};
use crate::templates::Templates;

#[derive(Clone)]
pub struct Llm {
    provider: Arc<dyn TextGenerator>,
    templates: Arc<Templates>,
}

impl Llm {
    pub fn new(provider: Arc<dyn TextGenerator>, templates: Templates) -> Self {
        Self {
            provider,
            templates: Arc::new(templates),
        }
    }

    pub fn provider(&self) -> &Arc<dyn TextGenerator> {
        &self.provider
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    pub async fn call(
        &self,
        tag: ModuleTag,
        persona_name: &str,
        blocks: Vec<ContextBlock>,
    ) -> Result<GenerationResult, ProviderError> {
        let req = self.templates.request(tag, persona_name, blocks);
        let out = self.provider.generate(&req).await;
        if let Err(e) = &out {
            tracing::debug!(%tag, error = %e, "provider call failed");
        }
        out
    }
}

/// A module result that may have fallen back to a prior or default value.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<T> {
    pub value: T,
    /// Reason for degraded mode, if the module fell back.
    pub degraded: Option<String>,
    /// Context block labels of every request issued, in order.
    pub request_blocks: Vec<String>,
    pub calls: usize,
}

impl<T> Outcome<T> {
    pub fn default_with(value: T) -> Self {
        Self {
            value,
            degraded: None,
            request_blocks: Vec::new(),
            calls: 0,
        }
    }

    pub fn degrade(&mut self, reason: impl Into<String>) {
        self.degraded = Some(reason.into());
    }

    pub fn is_degraded(&self) -> bool {
        self.degraded.is_some()
    }
}
