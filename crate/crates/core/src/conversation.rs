//! Conversation data model: messages, dialog history, sessions and personas.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::awareness::{EmotionLabel, OtherState, SelfState};

#[derive(Debug, Error, PartialEq)]
pub enum ConversationError {
    #[error("message {id} breaks history order (turn {turn_index} after turn {last_turn})")]
    OrderViolation {
        id: String,
        turn_index: u64,
        last_turn: u64,
    },
    #[error("duplicate message id {0}")]
    DuplicateId(String),
    #[error("message belongs to session {found}, history is {expected}")]
    SessionMismatch { expected: String, found: String },
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("persona parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("persona field `{field}` is invalid: {reason}")]
    Validation { field: &'static str, reason: String },
    #[error("cannot read persona file: {0}")]
    Io(#[from] std::io::Error),
}

/// Millisecond-precision ISO-8601 UTC timestamps (`2024-05-01T12:00:00.123Z`).
pub mod timestamp {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Quick,
    Analytical,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub session_id: String,
    pub turn_index: u64,
    pub role: Role,
    pub kind: MessageKind,
    pub text: String,
    #[serde(with = "timestamp")]
    pub created_at: DateTime<Utc>,
}

impl Message {
    pub fn user(
        session_id: &str,
        turn_index: u64,
        id: String,
        text: impl Into<String>,
        at: DateTime<Utc>,
    ) -> Self {
        Self {
            id,
            session_id: session_id.to_string(),
            turn_index,
            role: Role::User,
            kind: MessageKind::Plain,
            text: text.into(),
            created_at: at,
        }
    }

    pub fn agent(
        session_id: &str,
        turn_index: u64,
        id: String,
        kind: MessageKind,
        text: impl Into<String>,
        at: DateTime<Utc>,
    ) -> Self {
        debug_assert!(kind != MessageKind::Plain);
        Self {
            id,
            session_id: session_id.to_string(),
            turn_index,
            role: Role::Agent,
            kind,
            text: text.into(),
            created_at: at,
        }
    }

    /// Total order within a session: turn, then timestamp, then id.
    pub fn order_cmp(&self, other: &Message) -> Ordering {
        (self.turn_index, self.created_at, self.id.as_str()).cmp(&(
            other.turn_index,
            other.created_at,
            other.id.as_str(),
        ))
    }

    pub fn is_user(&self) -> bool {
        self.role == Role::User
    }

    /// `user`/`agent` kinds must agree with the role.
    pub fn kind_matches_role(&self) -> bool {
        match self.role {
            Role::User => self.kind == MessageKind::Plain,
            Role::Agent => self.kind != MessageKind::Plain,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}

/// Ordered record of one session's messages. Single writer, cloned snapshots for readers.
#[derive(Debug, Clone, Default)]
pub struct DialogHistory {
    session_id: String,
    messages: Vec<Message>,
    ids: HashSet<String>,
}

impl DialogHistory {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            messages: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn last(&self) -> Option<&Message> {
        self.messages.last()
    }

    pub fn append(&mut self, msg: Message) -> Result<(), ConversationError> {
        if msg.session_id != self.session_id {
            return Err(ConversationError::SessionMismatch {
                expected: self.session_id.clone(),
                found: msg.session_id,
            });
        }
        if self.ids.contains(&msg.id) {
            return Err(ConversationError::DuplicateId(msg.id));
        }
        if let Some(last) = self.messages.last() {
            if msg.order_cmp(last) == Ordering::Less {
                return Err(ConversationError::OrderViolation {
                    id: msg.id,
                    turn_index: msg.turn_index,
                    last_turn: last.turn_index,
                });
            }
        }
        self.ids.insert(msg.id.clone());
        self.messages.push(msg);
        Ok(())
    }

    /// The last `min(n, len)` messages in order.
    pub fn window(&self, n: usize) -> Vec<Message> {
        let n = n.max(1);
        let start = self.messages.len().saturating_sub(n);
        self.messages[start..].to_vec()
    }

    /// Messages belonging to `turn_index`, in order.
    pub fn turn(&self, turn_index: u64) -> Vec<Message> {
        self.messages
            .iter()
            .filter(|m| m.turn_index == turn_index)
            .cloned()
            .collect()
    }

    pub fn from_messages(
        session_id: impl Into<String>,
        messages: impl IntoIterator<Item = Message>,
    ) -> Result<Self, ConversationError> {
        let mut history = Self::new(session_id);
        for m in messages {
            history.append(m)?;
        }
        Ok(history)
    }

    /// Parse a transcript file body (one JSON message per line).
    pub fn from_jsonl(session_id: &str, body: &str) -> Result<Self, TranscriptError> {
        let mut history = Self::new(session_id);
        for (idx, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let msg: Message = serde_json::from_str(line).map_err(|e| TranscriptError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            history.append(msg)?;
        }
        Ok(history)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&m.to_json_line());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Order(#[from] ConversationError),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("turn {turn_index}: {reason}")]
pub struct GrammarViolation {
    pub turn_index: u64,
    pub reason: String,
}

/// Check every completed turn against `user (quick analytical*) | user (analytical+)`.
///
/// With `always_quick` the quick-less alternative is rejected. The final turn may be
/// in flight and is only checked for prefix validity.
pub fn check_turn_grammar(messages: &[Message], always_quick: bool) -> Result<(), GrammarViolation> {
    let mut turns: Vec<(u64, Vec<&Message>)> = Vec::new();
    for m in messages {
        match turns.last_mut() {
            Some((t, msgs)) if *t == m.turn_index => msgs.push(m),
            _ => turns.push((m.turn_index, vec![m])),
        }
    }
    let count = turns.len();
    for (pos, (turn_index, msgs)) in turns.into_iter().enumerate() {
        let fail = |reason: &str| GrammarViolation {
            turn_index,
            reason: reason.to_string(),
        };
        let in_flight = pos + 1 == count;
        let (first, rest) = msgs.split_first().expect("non-empty turn");
        if first.role != Role::User || first.kind != MessageKind::Plain {
            return Err(fail("turn must open with one plain user message"));
        }
        if rest.is_empty() {
            if in_flight {
                continue;
            }
            return Err(fail("completed turn has no agent message"));
        }
        for (i, m) in rest.iter().enumerate() {
            if m.role != Role::Agent {
                return Err(fail("more than one user message in turn"));
            }
            match m.kind {
                MessageKind::Quick if i == 0 => {}
                MessageKind::Quick => return Err(fail("quick message after first agent slot")),
                MessageKind::Analytical => {}
                MessageKind::Plain => return Err(fail("agent message with plain kind")),
            }
        }
        if always_quick && rest[0].kind != MessageKind::Quick {
            return Err(fail("quick message required first"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Concluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub persona_id: String,
    #[serde(with = "timestamp")]
    pub created_at: DateTime<Utc>,
    pub self_state: SelfState,
    pub other_state: OtherState,
    pub status: SessionStatus,
}

impl Session {
    pub fn new(id: impl Into<String>, persona: &Persona, created_at: DateTime<Utc>) -> Self {
        Self {
            id: id.into(),
            persona_id: persona.id.clone(),
            created_at,
            self_state: SelfState::initial(persona),
            other_state: OtherState::initial(),
            status: SessionStatus::Active,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == SessionStatus::Active
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trait {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

/// Character configuration conditioning every module's instructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub identity: String,
    #[serde(default)]
    pub thinking_mode: String,
    #[serde(default)]
    pub language_style: String,
    #[serde(default)]
    pub traits: Vec<Trait>,
    #[serde(default)]
    pub interests: Vec<String>,
    /// Humor and emotional-culture notes.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub culture_notes: String,
    #[serde(default = "EmotionLabel::neutral")]
    pub default_emotion: EmotionLabel,
    /// Facts about the character seeded into agent memory at session start.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub memories: Vec<String>,
    /// Canned acknowledgements used when the quick responder cannot reach the provider.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub acknowledgements: Vec<String>,
}

impl Persona {
    pub fn minimal(id: &str, name: &str) -> Self {
        Self {
            id: id.to_string(),
            name: name.to_string(),
            identity: String::new(),
            thinking_mode: String::new(),
            language_style: String::new(),
            traits: Vec::new(),
            interests: Vec::new(),
            culture_notes: String::new(),
            default_emotion: EmotionLabel::neutral(),
            memories: Vec::new(),
            acknowledgements: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), PersonaError> {
        if self.id.trim().is_empty() {
            return Err(PersonaError::Validation {
                field: "id",
                reason: "must be non-empty".into(),
            });
        }
        if self.name.trim().is_empty() {
            return Err(PersonaError::Validation {
                field: "name",
                reason: "must be non-empty".into(),
            });
        }
        if let Err(reason) = self.default_emotion.validate() {
            return Err(PersonaError::Validation {
                field: "default_emotion",
                reason,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("persona serializes")
    }

    /// Human-readable block used as prompt context.
    pub fn describe(&self) -> String {
        let mut out = format!("Name: {}\n", self.name);
        if !self.identity.is_empty() {
            out.push_str(&format!("Identity: {}\n", self.identity));
        }
        if !self.thinking_mode.is_empty() {
            out.push_str(&format!("Thinking mode: {}\n", self.thinking_mode));
        }
        if !self.language_style.is_empty() {
            out.push_str(&format!("Language style: {}\n", self.language_style));
        }
        for t in &self.traits {
            out.push_str(&format!("Trait {}: {}\n", t.name, t.description));
        }
        if !self.interests.is_empty() {
            out.push_str(&format!("Interests: {}\n", self.interests.join(", ")));
        }
        if !self.culture_notes.is_empty() {
            out.push_str(&format!("Humor and culture: {}\n", self.culture_notes));
        }
        out.push_str(&format!("Default emotion: {}", self.default_emotion));
        out
    }
}

/// Parse and validate a persona JSON document.
pub fn load_persona(source: &str) -> Result<Persona, PersonaError> {
    let persona: Persona = serde_json::from_str(source).map_err(|e| PersonaError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    persona.validate()?;
    Ok(persona)
}

pub fn load_persona_file(path: &Path) -> Result<Persona, PersonaError> {
    load_persona(&std::fs::read_to_string(path)?)
}

/// Render messages as `role[kind]: text` lines for prompt context.
pub fn render_window(messages: &[Message]) -> String {
    messages
        .iter()
        .map(|m| match m.role {
            Role::User => format!("user: {}", m.text),
            Role::Agent => format!(
                "agent[{}]: {}",
                match m.kind {
                    MessageKind::Quick => "quick",
                    MessageKind::Analytical => "analytical",
                    MessageKind::Plain => "plain",
                },
                m.text
            ),
        })
        .collect::<Vec<_>>()
        .join("\n")
}
