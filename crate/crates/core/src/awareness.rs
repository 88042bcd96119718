//! Self- and other-awareness: structured analyses of the agent and the user.
//!
//! Other-awareness runs on each user input (conversational and social perspectives in
//! one call). Self-awareness runs after the turn's last message as the re-think step and
//! its result drives the next turn's quick response.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use crate::conversation::{render_window, Message, Persona, Role};
use crate::llm::{Llm, Outcome};
use crate::memory::MemoryPiece;
use crate::provider::labels::*;
use crate::provider::{parse_structured, ContextBlock, ModuleTag, SchemaId, StructuredOutput};

pub const MAX_NUANCE_CHARS: usize = 120;
pub const MAX_CANDIDATE_TOPICS: usize = 3;
pub const MAX_STRATEGY_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Emotion {
    Joy,
    Interest,
    Neutral,
    Surprise,
    Sadness,
    Anger,
    Fear,
    Disgust,
}

impl Emotion {
    pub const ALL: [Emotion; 8] = [
        Emotion::Joy,
        Emotion::Interest,
        Emotion::Neutral,
        Emotion::Surprise,
        Emotion::Sadness,
        Emotion::Anger,
        Emotion::Fear,
        Emotion::Disgust,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Joy => "joy",
            Emotion::Interest => "interest",
            Emotion::Neutral => "neutral",
            Emotion::Surprise => "surprise",
            Emotion::Sadness => "sadness",
            Emotion::Anger => "anger",
            Emotion::Fear => "fear",
            Emotion::Disgust => "disgust",
        }
    }

    /// Case-insensitive lookup.
    pub fn parse(s: &str) -> Option<Emotion> {
        let s = s.trim().to_ascii_lowercase();
        Emotion::ALL.into_iter().find(|e| e.as_str() == s)
    }

    pub fn is_negative(self) -> bool {
        matches!(self, Emotion::Sadness | Emotion::Anger | Emotion::Fear | Emotion::Disgust)
    }
}

impl<'de> Deserialize<'de> for Emotion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Emotion::parse(&s).ok_or_else(|| {
            serde::de::Error::unknown_variant(&s, &["joy", "interest", "neutral", "surprise", "sadness", "anger", "fear", "disgust"])
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmotionLabel {
    pub label: Emotion,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nuance: Option<String>,
}

impl EmotionLabel {
    pub fn new(label: Emotion) -> Self {
        Self { label, nuance: None }
    }

    pub fn neutral() -> Self {
        Self::new(Emotion::Neutral)
    }

    pub fn with_nuance(label: Emotion, nuance: impl Into<String>) -> Self {
        Self {
            label,
            nuance: Some(nuance.into()),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match &self.nuance {
            Some(n) if n.chars().count() > MAX_NUANCE_CHARS => {
                Err(format!("nuance longer than {MAX_NUANCE_CHARS} characters"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.nuance {
            Some(n) => write!(f, "{} ({n})", self.label.as_str()),
            None => f.write_str(self.label.as_str()),
        }
    }
}

// Accepts either `"joy"` or `{"label": "joy", "nuance": "..."}`.
impl<'de> Deserialize<'de> for EmotionLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Wire {
            Bare(Emotion),
            Full {
                label: Emotion,
                #[serde(default)]
                nuance: Option<String>,
            },
        }
        Ok(match Wire::deserialize(d)? {
            Wire::Bare(label) => EmotionLabel::new(label),
            Wire::Full { label, nuance } => EmotionLabel { label, nuance },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plan {
    ExploreFurther,
    SwitchTopic,
    Conclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfState {
    pub satisfaction: u8,
    pub opinion: String,
    pub interesting_topic: String,
    pub plan: Plan,
    pub current_emotion: EmotionLabel,
    pub next_emotion: EmotionLabel,
    pub tone_style: String,
    #[serde(default)]
    pub updated_at_turn: u64,
}

impl SelfState {
    /// Session-start state: neutral, mid satisfaction, exploring, persona's own style.
    pub fn initial(persona: &Persona) -> Self {
        Self {
            satisfaction: 3,
            opinion: String::new(),
            interesting_topic: persona.interests.first().cloned().unwrap_or_default(),
            plan: Plan::ExploreFurther,
            current_emotion: EmotionLabel::neutral(),
            next_emotion: EmotionLabel::neutral(),
            tone_style: persona.language_style.clone(),
            updated_at_turn: 0,
        }
    }

    /// Field-level invariant violations, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if !(1..=5).contains(&self.satisfaction) {
            bad.push("satisfaction".to_string());
        }
        if self.plan == Plan::Conclude && self.tone_style.trim().is_empty() {
            bad.push("tone_style".to_string());
        }
        if self.current_emotion.validate().is_err() {
            bad.push("current_emotion.nuance".to_string());
        }
        if self.next_emotion.validate().is_err() {
            bad.push("next_emotion.nuance".to_string());
        }
        bad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStrategy {
    pub goal: String,
    pub steps: Vec<String>,
    pub current_step_index: usize,
    pub next_action: String,
}

impl TaskStrategy {
    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.steps.is_empty() || self.steps.len() > MAX_STRATEGY_STEPS {
            bad.push("strategy.steps".to_string());
        }
        if self.current_step_index >= self.steps.len() {
            bad.push("strategy.current_step_index".to_string());
        }
        if self.next_action.trim().is_empty() {
            bad.push("strategy.next_action".to_string());
        }
        bad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtherState {
    pub meta_topic: String,
    pub user_satisfaction: u8,
    pub candidate_topics: Vec<String>,
    pub task_oriented: bool,
    #[serde(default)]
    pub strategy: Option<TaskStrategy>,
    pub user_emotion: EmotionLabel,
    pub natural_response_emotion: EmotionLabel,
    #[serde(default)]
    pub updated_at_turn: u64,
}

impl OtherState {
    pub fn initial() -> Self {
        Self {
            meta_topic: "unknown".into(),
            user_satisfaction: 3,
            candidate_topics: Vec::new(),
            task_oriented: false,
            strategy: None,
            user_emotion: EmotionLabel::neutral(),
            natural_response_emotion: EmotionLabel::neutral(),
            updated_at_turn: 0,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if !(1..=5).contains(&self.user_satisfaction) {
            bad.push("user_satisfaction".to_string());
        }
        if self.candidate_topics.len() > MAX_CANDIDATE_TOPICS {
            bad.push("candidate_topics".to_string());
        }
        match (&self.strategy, self.task_oriented) {
            (Some(s), true) => bad.extend(s.violations()),
            (None, false) => {}
            _ => bad.push("strategy".to_string()),
        }
        if self.user_emotion.validate().is_err() {
            bad.push("user_emotion.nuance".to_string());
        }
        if self.natural_response_emotion.validate().is_err() {
            bad.push("natural_response_emotion.nuance".to_string());
        }
        bad
    }
}

/// Which perspective a split-mode call covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perspective {
    Both,
    Conversational,
    Social,
}

impl Perspective {
    fn as_str(self) -> &'static str {
        match self {
            Perspective::Both => "conversational and social",
            Perspective::Conversational => "conversational",
            Perspective::Social => "social",
        }
    }
}

fn state_json<T: Serialize>(state: &T) -> String {
    serde_json::to_string_pretty(state).expect("state serializes")
}

fn last_user_text(window: &[Message]) -> String {
    window
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.text.clone())
        .unwrap_or_default()
}

async fn one_other_call(
    llm: &Llm,
    persona: &Persona,
    window: &[Message],
    prior: &OtherState,
    memory: &str,
    perspective: Perspective,
) -> (Vec<String>, Result<OtherState, String>) {
    let blocks = vec![
        ContextBlock::new(PERSONA, persona.describe()),
        ContextBlock::new(WINDOW, render_window(window)),
        ContextBlock::new(USER_INPUT, last_user_text(window)),
        ContextBlock::new(OTHER_STATE, state_json(prior)),
        ContextBlock::new(MEMORY, memory),
        ContextBlock::new(PERSPECTIVE, perspective.as_str()),
    ];
    let labels = blocks.iter().map(|b| b.label.clone()).collect();
    let result = match llm.call(ModuleTag::OtherAwareness, &persona.name, blocks).await {
        Ok(out) => match parse_structured(&out.text, SchemaId::OtherState) {
            Ok(StructuredOutput::OtherState(s)) => Ok(s),
            Ok(_) => unreachable!("schema mismatch"),
            Err(v) => Err(v.to_string()),
        },
        Err(e) => Err(e.to_string()),
    };
    (labels, result)
}

/// Analyze the user from the dialog window and recalled memory. Degrades to `prior` on any failure.
pub async fn assess_other(
    llm: &Llm,
    persona: &Persona,
    window: &[Message],
    prior: &OtherState,
    memory: &[(MemoryPiece, f64)],
    turn_index: u64,
    split_perspectives: bool,
) -> Outcome<OtherState> {
    debug_assert!(window.last().is_some_and(Message::is_user));
    let mut outcome = Outcome::default_with(prior.clone());
    let memory = memory.iter().map(|(p, _)| format!("- {}", p.statement)).collect::<Vec<_>>().join("\n");
    let merged = if split_perspectives {
        let ((l1, conv), (l2, social)) = futures::join!(
            one_other_call(llm, persona, window, prior, &memory, Perspective::Conversational),
            one_other_call(llm, persona, window, prior, &memory, Perspective::Social),
        );
        outcome.calls = 2;
        outcome.request_blocks = l1;
        outcome.request_blocks.extend(l2);
        match (conv, social) {
            (Ok(c), Ok(s)) => Ok(OtherState {
                user_emotion: s.user_emotion,
                natural_response_emotion: s.natural_response_emotion,
                ..c
            }),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    } else {
        let (labels, res) = one_other_call(llm, persona, window, prior, &memory, Perspective::Both).await;
        outcome.calls = 1;
        outcome.request_blocks = labels;
        res
    };
    match merged {
        Ok(mut state) if state.violations().is_empty() => {
            state.updated_at_turn = turn_index;
            outcome.value = state;
        }
        Ok(state) => {
            outcome.degrade(format!("other_state invariant violated: {}", state.violations().join(",")));
            outcome.value.updated_at_turn = turn_index;
        }
        Err(e) => {
            outcome.degrade(e);
            outcome.value.updated_at_turn = turn_index;
        }
    }
    outcome
}

async fn one_self_call(
    llm: &Llm,
    persona: &Persona,
    window: &[Message],
    prior: &SelfState,
    phase: &str,
    perspective: Perspective,
) -> (Vec<String>, Result<SelfState, String>) {
    let blocks = vec![
        ContextBlock::new(PERSONA, persona.describe()),
        ContextBlock::new(WINDOW, render_window(window)),
        ContextBlock::new(USER_INPUT, last_user_text(window)),
        ContextBlock::new(SELF_STATE, state_json(prior)),
        ContextBlock::new(PHASE, phase),
        ContextBlock::new(PERSPECTIVE, perspective.as_str()),
    ];
    let labels = blocks.iter().map(|b| b.label.clone()).collect();
    let result = match llm.call(ModuleTag::SelfAwareness, &persona.name, blocks).await {
        Ok(out) => match parse_structured(&out.text, SchemaId::SelfState) {
            Ok(StructuredOutput::SelfState(s)) => Ok(s),
            Ok(_) => unreachable!("schema mismatch"),
            Err(v) => Err(v.to_string()),
        },
        Err(e) => Err(e.to_string()),
    };
    (labels, result)
}

async fn self_assessment(
    llm: &Llm,
    persona: &Persona,
    window: &[Message],
    prior: &SelfState,
    turn_index: u64,
    phase: &str,
    split_perspectives: bool,
) -> Outcome<SelfState> {
    let mut outcome = Outcome::default_with(prior.clone());
    let merged = if split_perspectives {
        let ((l1, conv), (l2, social)) = futures::join!(
            one_self_call(llm, persona, window, prior, phase, Perspective::Conversational),
            one_self_call(llm, persona, window, prior, phase, Perspective::Social),
        );
        outcome.calls = 2;
        outcome.request_blocks = l1;
        outcome.request_blocks.extend(l2);
        match (conv, social) {
            (Ok(c), Ok(s)) => Ok(SelfState {
                current_emotion: s.current_emotion,
                next_emotion: s.next_emotion,
                tone_style: s.tone_style,
                ..c
            }),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    } else {
        let (labels, res) = one_self_call(llm, persona, window, prior, phase, Perspective::Both).await;
        outcome.calls = 1;
        outcome.request_blocks = labels;
        res
    };
    match merged {
        Ok(mut state) if state.violations().is_empty() => {
            state.updated_at_turn = turn_index;
            outcome.value = state;
        }
        Ok(state) => {
            outcome.degrade(format!("self_state invariant violated: {}", state.violations().join(",")));
            outcome.value.updated_at_turn = turn_index;
        }
        Err(e) => {
            outcome.degrade(e);
            outcome.value.updated_at_turn = turn_index;
        }
    }
    outcome
}

/// Pre-response self analysis. Only used when a session has no re-think result yet.
pub async fn assess_self(
    llm: &Llm,
    persona: &Persona,
    window: &[Message],
    prior: Option<&SelfState>,
    turn_index: u64,
    split_perspectives: bool,
) -> Outcome<SelfState> {
    let initial;
    let prior = match prior {
        Some(p) => p,
        None => {
            initial = SelfState::initial(persona);
            &initial
        }
    };
    self_assessment(llm, persona, window, prior, turn_index, "assess", split_perspectives).await
}

/// Post-turn re-think over the window that includes the turn's final response.
pub async fn rethink_self(
    llm: &Llm,
    persona: &Persona,
    window: &[Message],
    current: &SelfState,
    turn_index: u64,
    split_perspectives: bool,
) -> Outcome<SelfState> {
    debug_assert!(window.last().is_some_and(|m| m.role == Role::Agent));
    self_assessment(llm, persona, window, current, turn_index, "rethink", split_perspectives).await
}
