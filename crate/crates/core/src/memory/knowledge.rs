//! External knowledge: query rewrite, multi-source retrieval, summarization.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{jaccard, tokenize};
use crate::conversation::{render_window, Message};
use crate::llm::{Llm, Outcome};
use crate::provider::labels::*;
use crate::provider::{parse_structured, ContextBlock, ModuleTag, SchemaId, StructuredOutput};

pub const MAX_QUERIES: usize = 3;
pub const DEGRADED_SUMMARY_CHARS: usize = 512;
pub const DEFAULT_MAX_SNIPPETS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub source_id: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KnowledgeBrief {
    pub queries_used: Vec<String>,
    pub snippets: Vec<Snippet>,
    pub summary: String,
}

impl KnowledgeBrief {
    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }
}

#[derive(Debug, Clone, Error)]
#[error("knowledge source {source_id} failed: {message}")]
pub struct KnowledgeError {
    pub source_id: String,
    pub message: String,
}

#[async_trait]
pub trait KnowledgeSource: Send + Sync {
    fn id(&self) -> &str;

    async fn lookup(&self, query: &str) -> Result<Vec<Snippet>, KnowledgeError>;
}

#[derive(Debug, Clone)]
struct Passage {
    source_id: String,
    text: String,
    tokens: BTreeSet<String>,
}

/// Plain-text files in a directory, split into blank-line separated passages.
#[derive(Debug, Clone)]
pub struct OfflineCorpus {
    id: String,
    passages: Vec<Passage>,
    per_query: usize,
}

impl OfflineCorpus {
    pub fn from_documents(id: &str, docs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut passages = Vec::new();
        for (name, body) in docs {
            for (n, chunk) in body.split("\n\n").map(str::trim).filter(|c| !c.is_empty()).enumerate() {
                passages.push(Passage {
                    source_id: format!("{id}:{name}#{n}"),
                    text: chunk.to_string(),
                    tokens: tokenize(chunk),
                });
            }
        }
        Self {
            id: id.to_string(),
            passages,
            per_query: 5,
        }
    }

    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut docs = Vec::new();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        for path in paths {
            let Ok(body) = std::fs::read_to_string(&path) else {
                tracing::warn!(path = %path.display(), "skipping unreadable knowledge file");
                continue;
            };
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            docs.push((name, body));
        }
        Ok(Self::from_documents("offline", docs))
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }
}

#[async_trait]
impl KnowledgeSource for OfflineCorpus {
    fn id(&self) -> &str {
        &self.id
    }

    async fn lookup(&self, query: &str) -> Result<Vec<Snippet>, KnowledgeError> {
        let q = tokenize(query);
        let mut hits: Vec<Snippet> = self
            .passages
            .iter()
            .filter_map(|p| {
                let score = jaccard(&q, &p.tokens);
                (score > 0.0).then(|| Snippet {
                    source_id: p.source_id.clone(),
                    text: p.text.clone(),
                    score,
                })
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.source_id.cmp(&b.source_id)));
        hits.truncate(self.per_query);
        Ok(hits)
    }
}

/// Online search over HTTP: `GET <endpoint>?q=<query>` returning `[{"text", "score", "source_id"?}]`.
pub struct HttpSearchSource {
    id: String,
    endpoint: String,
    client: reqwest::Client,
}

impl HttpSearchSource {
    pub fn new(id: &str, endpoint: &str, timeout: std::time::Duration) -> Self {
        Self {
            id: id.to_string(),
            endpoint: endpoint.to_string(),
            client: reqwest::Client::builder().timeout(timeout).build().expect("http client builds"),
        }
    }
}

#[derive(Deserialize)]
struct SearchHit {
    text: String,
    #[serde(default)]
    score: f64,
    #[serde(default)]
    source_id: Option<String>,
}

#[async_trait]
impl KnowledgeSource for HttpSearchSource {
    fn id(&self) -> &str {
        &self.id
    }

    async fn lookup(&self, query: &str) -> Result<Vec<Snippet>, KnowledgeError> {
        let fail = |message: String| KnowledgeError {
            source_id: self.id.clone(),
            message,
        };
        let resp = self
            .client
            .get(&self.endpoint)
            .query(&[("q", query)])
            .send()
            .await
            .map_err(|e| fail(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(fail(format!("status {}", resp.status())));
        }
        let hits: Vec<SearchHit> = resp.json().await.map_err(|e| fail(e.to_string()))?;
        Ok(hits
            .into_iter()
            .filter(|h| !h.text.trim().is_empty())
            .map(|h| Snippet {
                source_id: h.source_id.unwrap_or_else(|| self.id.clone()),
                text: h.text,
                score: h.score.clamp(0.0, 1.0),
            })
            .collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct FetchOutcome {
    pub snippets: Vec<Snippet>,
    pub failures: Vec<KnowledgeError>,
}

/// Union of per-source lookups for every query. Failing sources are skipped.
pub async fn fetch_knowledge(
    queries: &[String],
    sources: &[Arc<dyn KnowledgeSource>],
    max_snippets: usize,
) -> FetchOutcome {
    let mut outcome = FetchOutcome::default();
    if sources.is_empty() {
        return outcome;
    }
    let lookups = sources.iter().flat_map(|s| queries.iter().map(move |q| (s, q)));
    let results = futures::future::join_all(lookups.map(|(s, q)| async move { s.lookup(q).await })).await;
    let mut merged: Vec<Snippet> = Vec::new();
    for result in results {
        match result {
            Ok(snippets) => {
                for s in snippets {
                    match merged.iter_mut().find(|m| m.source_id == s.source_id && m.text == s.text) {
                        Some(existing) => existing.score = existing.score.max(s.score),
                        None => merged.push(s),
                    }
                }
            }
            Err(e) => {
                tracing::warn!(source = %e.source_id, error = %e.message, "knowledge source failed");
                if !outcome.failures.iter().any(|f| f.source_id == e.source_id) {
                    outcome.failures.push(e);
                }
            }
        }
    }
    merged.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.source_id.cmp(&b.source_id))
            .then_with(|| a.text.cmp(&b.text))
    });
    merged.truncate(max_snippets);
    outcome.snippets = merged;
    outcome
}

/// Up to three standalone queries; falls back to the raw input on any failure.
pub async fn rewrite_query(
    llm: &Llm,
    persona_name: &str,
    user_input: &str,
    window: &[Message],
) -> Outcome<Vec<String>> {
    let mut outcome = Outcome::default_with(vec![user_input.to_string()]);
    outcome.calls = 1;
    let blocks = vec![
        ContextBlock::new(WINDOW, render_window(window)),
        ContextBlock::new(USER_INPUT, user_input),
    ];
    outcome.request_blocks = blocks.iter().map(|b| b.label.clone()).collect();
    match llm.call(ModuleTag::QueryRewrite, persona_name, blocks).await {
        Ok(out) => match parse_structured(&out.text, SchemaId::Queries) {
            Ok(StructuredOutput::Queries(q)) => {
                let queries: Vec<String> = q
                    .into_iter()
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .take(MAX_QUERIES)
                    .collect();
                if queries.is_empty() {
                    outcome.degrade("query rewrite returned no queries");
                } else {
                    outcome.value = queries;
                }
            }
            Ok(_) => unreachable!("schema mismatch"),
            Err(v) => outcome.degrade(format!("query rewrite: {v}")),
        },
        Err(e) => outcome.degrade(format!("query rewrite: {e}")),
    }
    outcome
}

fn degraded_summary(snippets: &[Snippet]) -> String {
    let mut top: Vec<&Snippet> = snippets.iter().collect();
    top.sort_by(|a, b| b.score.total_cmp(&a.score));
    let joined = top.iter().take(2).map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n");
    joined.chars().take(DEGRADED_SUMMARY_CHARS).collect()
}

/// One provider call when there is anything to summarize; none otherwise.
pub async fn summarize_knowledge(
    llm: &Llm,
    persona_name: &str,
    snippets: Vec<Snippet>,
    user_input: Option<&str>,
) -> Outcome<KnowledgeBrief> {
    let mut outcome = Outcome::default_with(KnowledgeBrief::default());
    if snippets.is_empty() {
        return outcome;
    }
    let rendered = snippets
        .iter()
        .map(|s| format!("[{}] ({:.3}) {}", s.source_id, s.score, s.text))
        .collect::<Vec<_>>()
        .join("\n");
    let mut blocks = vec![ContextBlock::new(SNIPPETS, rendered)];
    if let Some(input) = user_input {
        blocks.push(ContextBlock::new(USER_INPUT, input));
    }
    outcome.request_blocks = blocks.iter().map(|b| b.label.clone()).collect();
    outcome.calls = 1;
    let summary = match llm.call(ModuleTag::KnowledgeSummarize, persona_name, blocks).await {
        Ok(out) if !out.text.trim().is_empty() => out.text.trim().to_string(),
        Ok(_) => {
            outcome.degrade("knowledge summary was empty");
            degraded_summary(&snippets)
        }
        Err(e) => {
            outcome.degrade(format!("knowledge summary: {e}"));
            degraded_summary(&snippets)
        }
    };
    outcome.value = KnowledgeBrief {
        queries_used: Vec::new(),
        snippets,
        summary,
    };
    outcome
}
