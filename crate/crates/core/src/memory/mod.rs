//! Internal memory (extraction, storage, retrieval, consolidation) and the external
//! knowledge pipeline (query rewrite, multi-source fetch, summarization).

mod extract;
pub mod knowledge;
mod store;

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::conversation::timestamp;

pub use extract::{extract_pieces, seed_pieces, ExtractError};
pub use knowledge::{
    fetch_knowledge, rewrite_query, summarize_knowledge, FetchOutcome, HttpSearchSource, KnowledgeBrief,
    KnowledgeError, KnowledgeSource, OfflineCorpus, Snippet,
};
pub use store::{ConsolidationReport, MemoryStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    User,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Event,
    Relationship,
    Preference,
    Fact,
    Other,
}

/// Turn a piece was extracted from, or `configured` for persona-seeded memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceTurn {
    Turn(u64),
    Configured,
}

impl Serialize for SourceTurn {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SourceTurn::Turn(t) => s.serialize_u64(*t),
            SourceTurn::Configured => s.serialize_str("configured"),
        }
    }
}

impl<'de> Deserialize<'de> for SourceTurn {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Wire {
            Turn(u64),
            Tag(String),
        }
        match Wire::deserialize(d)? {
            Wire::Turn(t) => Ok(SourceTurn::Turn(t)),
            Wire::Tag(s) if s == "configured" => Ok(SourceTurn::Configured),
            Wire::Tag(s) => Err(serde::de::Error::custom(format!("bad source_turn {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryPiece {
    pub id: String,
    pub owner: Owner,
    pub category: Category,
    pub statement: String,
    pub source_turn: SourceTurn,
    #[serde(with = "timestamp")]
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub superseded_by: Option<String>,
}

impl MemoryPiece {
    pub fn is_live(&self) -> bool {
        self.superseded_by.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error("duplicate memory id {0}")]
    DuplicateId(String),
    #[error("memory piece {0} has an empty statement")]
    EmptyStatement(String),
    #[error("memory piece {id} superseded by unknown piece {target}")]
    DanglingSupersession { id: String, target: String },
    #[error("memory file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("memory io: {0}")]
    Io(String),
}

impl From<std::io::Error> for MemoryError {
    fn from(e: std::io::Error) -> Self {
        MemoryError::Io(e.to_string())
    }
}

/// Lower-cased alphanumeric tokens. Apostrophes split words (`user's` -> `user`, `s`).
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Jaccard similarity of lower-cased token sets, in `[0, 1]`.
pub fn score(query: &str, piece: &MemoryPiece) -> f64 {
    jaccard(&tokenize(query), &tokenize(&piece.statement))
}

/// Lower-case, collapse whitespace, drop trailing punctuation.
pub fn normalize_statement(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim()
        .to_string()
}

/// Relevance scorer behind the retrieval contract. Lexical Jaccard by default.
pub trait Scorer: Send + Sync {
    fn score(&self, query: &str, statement: &str) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct JaccardScorer;

impl Scorer for JaccardScorer {
    fn score(&self, query: &str, statement: &str) -> f64 {
        jaccard(&tokenize(query), &tokenize(statement))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn piece(statement: &str) -> MemoryPiece {
        MemoryPiece {
            id: "m".into(),
            owner: Owner::User,
            category: Category::Fact,
            statement: statement.into(),
            source_turn: SourceTurn::Turn(0),
            created_at: Utc.timestamp_millis_opt(0).unwrap(),
            superseded_by: None,
        }
    }

    #[test]
    fn score_examples() {
        assert_eq!(score("I love Jazz", &piece("i love jazz")), 1.0);
        assert_eq!(score("cats", &piece("dogs bark")), 0.0);
        assert_eq!(score("a b", &piece("b c d")), 0.25);
        assert_eq!(score("", &piece("x")), 0.0);
    }

    #[test]
    fn source_turn_wire_forms() {
        assert_eq!(serde_json::to_string(&SourceTurn::Turn(4)).unwrap(), "4");
        assert_eq!(serde_json::to_string(&SourceTurn::Configured).unwrap(), "\"configured\"");
        assert_eq!(serde_json::from_str::<SourceTurn>("\"configured\"").unwrap(), SourceTurn::Configured);
        assert!(serde_json::from_str::<SourceTurn>("\"later\"").is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_statement("  User's   favorite color is Red. "), "user's favorite color is red");
    }
}
