//! HTTP provider speaking the common chat-completions wire format.

use std::path::Path;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use super::{GenerationRequest, GenerationResult, ProviderError, TextGenerator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_token_env: Option<String>,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: Vec<u64>,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            auth_token_env: None,
            model: "default".into(),
            timeout_ms: 10_000,
            max_retries: 2,
            backoff_ms: vec![250, 1000],
            max_in_flight: 8,
        }
    }
}

impl RemoteConfig {
    /// Overlay `ANTHRO_ENDPOINT`, `ANTHRO_MODEL`, `ANTHRO_TOKEN_ENV`, `ANTHRO_TIMEOUT_MS`.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var("ANTHRO_ENDPOINT") {
            cfg.endpoint = v;
        }
        if let Ok(v) = std::env::var("ANTHRO_MODEL") {
            cfg.model = v;
        }
        if let Ok(v) = std::env::var("ANTHRO_TOKEN_ENV") {
            cfg.auth_token_env = Some(v);
        }
        if let Some(v) = std::env::var("ANTHRO_TIMEOUT_MS").ok().and_then(|v| v.parse().ok()) {
            cfg.timeout_ms = v;
        }
        cfg
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let body = std::fs::read_to_string(path)?;
        serde_json::from_str(&body).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .backoff_ms
            .get(attempt as usize)
            .or(self.backoff_ms.last())
            .copied()
            .unwrap_or(0);
        Duration::from_millis(ms)
    }
}

pub struct RemoteProvider {
    config: RemoteConfig,
    client: reqwest::Client,
    in_flight: Semaphore,
    id: String,
}

enum Attempt {
    Done(GenerationResult),
    Retryable(ProviderError),
    Fatal(ProviderError),
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .expect("http client builds");
        Self {
            in_flight: Semaphore::new(config.max_in_flight.max(1)),
            id: format!("remote:{}", config.model),
            config,
            client,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn body(&self, req: &GenerationRequest) -> serde_json::Value {
        let mut user = String::new();
        for block in &req.context_blocks {
            user.push_str(&format!("## {}\n{}\n\n", block.label, block.text));
        }
        if user.is_empty() {
            user.push_str("Respond now.");
        }
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.system_instructions},
                {"role": "user", "content": user.trim_end()},
            ],
            "temperature": req.temperature_hint,
            "max_tokens": req.max_output_units,
        });
        if req.expected_schema.is_some() {
            body["response_format"] = json!({"type": "json_object"});
        }
        body
    }

    async fn attempt(&self, req: &GenerationRequest, started: Instant) -> Attempt {
        let mut call = self.client.post(&self.config.endpoint).json(&self.body(req));
        if let Some(var) = &self.config.auth_token_env {
            if let Ok(token) = std::env::var(var) {
                call = call.bearer_auth(token);
            }
        }
        let response = match call.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Attempt::Retryable(ProviderError::Timeout(Duration::from_millis(
                    self.config.timeout_ms,
                )))
            }
            Err(e) if e.is_connect() => return Attempt::Retryable(ProviderError::Rejected(e.to_string())),
            Err(e) => return Attempt::Fatal(ProviderError::Rejected(e.to_string())),
        };
        let status = response.status();
        if status.is_server_error() {
            return Attempt::Retryable(ProviderError::Rejected(format!("status {status}")));
        }
        if !status.is_success() {
            return Attempt::Fatal(ProviderError::Rejected(format!("status {status}")));
        }
        let parsed: CompletionResponse = match response.json().await {
            Ok(p) => p,
            Err(e) if e.is_timeout() => {
                return Attempt::Retryable(ProviderError::Timeout(Duration::from_millis(
                    self.config.timeout_ms,
                )))
            }
            Err(e) => return Attempt::Fatal(ProviderError::Rejected(format!("bad body: {e}"))),
        };
        let Some(choice) = parsed.choices.into_iter().next() else {
            return Attempt::Fatal(ProviderError::Rejected("empty choices".into()));
        };
        Attempt::Done(GenerationResult {
            text: choice.message.content.unwrap_or_default(),
            latency_ms: started.elapsed().as_millis() as u64,
            provider_id: self.id.clone(),
            truncated: choice.finish_reason.as_deref() == Some("length"),
        })
    }
}

#[async_trait]
impl TextGenerator for RemoteProvider {
    fn id(&self) -> &str {
        &self.id
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        let _permit = self.in_flight.acquire().await.expect("semaphore open");
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            match self.attempt(req, started).await {
                Attempt::Done(result) => return Ok(result),
                Attempt::Fatal(err) => return Err(err),
                Attempt::Retryable(err) => {
                    if attempt >= self.config.max_retries {
                        return Err(err);
                    }
                    tracing::warn!(tag = %req.module_tag, attempt, error = %err, "retrying provider call");
                    tokio::time::sleep(self.config.backoff(attempt)).await;
                    attempt += 1;
                }
            }
        }
    }
}
