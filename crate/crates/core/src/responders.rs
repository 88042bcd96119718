//! Quick (reflexive) response, the analytical response loop, and its exit rule.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::awareness::{OtherState, Plan, SelfState};
use crate::conversation::{render_window, Message, MessageKind, Persona};
use crate::llm::{Llm, Outcome};
use crate::memory::{KnowledgeBrief, MemoryPiece};
use crate::provider::labels::*;
use crate::provider::{parse_structured, ContextBlock, ModuleTag, ProviderError, SchemaId, StructuredOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequirementSource {
    OtherAwarenessPlan,
    TaskStrategyNext,
    ProactivitySuggestion,
    UserQuestion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub id: String,
    pub text: String,
    pub source: RequirementSource,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RequirementSet {
    pub items: Vec<Requirement>,
}

impl RequirementSet {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn all_covered(&self) -> bool {
        self.items.iter().all(|r| r.covered)
    }

    /// Fold a verdict in. Items already covered stay covered.
    pub fn apply(&mut self, verdict: &RethinkVerdict) {
        for item in &mut self.items {
            if verdict.coverage.get(&item.id).copied().unwrap_or(false) {
                item.covered = true;
            }
        }
    }

    fn render(&self) -> String {
        self.items
            .iter()
            .map(|r| format!("{}: {}{}", r.id, r.text, if r.covered { " (covered)" } else { "" }))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn push(&mut self, text: String, source: RequirementSource) {
        let id = format!("q{}", self.items.len() + 1);
        self.items.push(Requirement {
            id,
            text,
            source,
            covered: false,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RethinkVerdict {
    pub coverage: BTreeMap<String, bool>,
    pub all_covered: bool,
    pub missing_summary: String,
}

impl RethinkVerdict {
    fn from_set(reqs: &RequirementSet) -> Self {
        let coverage: BTreeMap<String, bool> = reqs.items.iter().map(|r| (r.id.clone(), r.covered)).collect();
        let missing: Vec<String> = reqs
            .items
            .iter()
            .filter(|r| !r.covered)
            .map(|r| format!("{} ({})", r.text, r.id))
            .collect();
        Self {
            all_covered: coverage.values().all(|c| *c),
            missing_summary: if missing.is_empty() {
                String::new()
            } else {
                format!("not yet addressed: {}", missing.join("; "))
            },
            coverage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub continuation_probability: f64,
    pub max_analytical_messages: u32,
    pub rng_seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            continuation_probability: 0.5,
            max_analytical_messages: 3,
            rng_seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopDecision {
    Continue,
    Conclude,
}

/// Cap first, then uncovered requirements, then the stochastic draw.
pub fn should_continue(verdict: &RethinkVerdict, emitted_analytical: u32, cfg: &LoopConfig, rng_draw: f64) -> LoopDecision {
    if emitted_analytical >= cfg.max_analytical_messages {
        LoopDecision::Conclude
    } else if !verdict.all_covered || rng_draw < cfg.continuation_probability {
        LoopDecision::Continue
    } else {
        LoopDecision::Conclude
    }
}

fn is_question(text: &str) -> bool {
    text.trim_end().ends_with('?')
}

/// Deterministic requirement assembly: question, task step, user-emotion response, proactivity.
pub fn build_requirements(other: &OtherState, self_state: &SelfState, user_msg: &Message) -> RequirementSet {
    let mut set = RequirementSet::default();
    if is_question(&user_msg.text) {
        set.push(format!("answer the user's question: {}", user_msg.text.trim()), RequirementSource::UserQuestion);
    }
    if other.task_oriented {
        if let Some(strategy) = &other.strategy {
            set.push(strategy.next_action.clone(), RequirementSource::TaskStrategyNext);
        }
    }
    if other.user_emotion.label.is_negative() {
        set.push(
            format!(
                "acknowledge the user's {} with {}",
                other.user_emotion.label.as_str(),
                other.natural_response_emotion.label.as_str()
            ),
            RequirementSource::OtherAwarenessPlan,
        );
    }
    let proactive = match self_state.plan {
        Plan::ExploreFurther => "deepen current topic".to_string(),
        Plan::SwitchTopic => {
            let topic = other
                .candidate_topics
                .first()
                .filter(|t| !t.trim().is_empty())
                .cloned()
                .or_else(|| Some(self_state.interesting_topic.clone()).filter(|t| !t.trim().is_empty()))
                .unwrap_or_else(|| "a new topic".to_string());
            format!("pivot to {topic}")
        }
        Plan::Conclude => "wind down politely".to_string(),
    };
    set.push(proactive, RequirementSource::ProactivitySuggestion);
    set
}

const FALLBACK_ACKS: [&str; 4] = [
    "Hmm, let me think about that for a second.",
    "Oh, interesting. Give me a moment.",
    "Right, I hear you. One sec.",
    "Let me gather my thoughts on that.",
];

pub(crate) fn fallback_ack(persona: &Persona, turn_index: u64) -> String {
    if persona.acknowledgements.is_empty() {
        FALLBACK_ACKS[(turn_index as usize) % FALLBACK_ACKS.len()].to_string()
    } else {
        persona.acknowledgements[(turn_index as usize) % persona.acknowledgements.len()].clone()
    }
}

/// Identity and timestamp for a message about to be emitted.
#[derive(Debug, Clone)]
pub struct MessageSlot {
    pub session_id: String,
    pub turn_index: u64,
    pub id: String,
    pub at: DateTime<Utc>,
}

impl MessageSlot {
    fn build(self, kind: MessageKind, text: String) -> Message {
        Message::agent(&self.session_id, self.turn_index, self.id, kind, text, self.at)
    }
}

/// Reflexive first reply from persona, window and self state only.
pub async fn quick_respond(
    llm: &Llm,
    persona: &Persona,
    window: &[Message],
    self_state: &SelfState,
    slot: impl FnOnce() -> MessageSlot,
) -> Outcome<Message> {
    let user_input = window.last().filter(|m| m.is_user()).map(|m| m.text.clone()).unwrap_or_default();
    let blocks = vec![
        ContextBlock::new(PERSONA, persona.describe()),
        ContextBlock::new(WINDOW, render_window(window)),
        ContextBlock::new(USER_INPUT, user_input),
        ContextBlock::new(SELF_STATE, serde_json::to_string_pretty(self_state).expect("state serializes")),
    ];
    let labels: Vec<String> = blocks.iter().map(|b| b.label.clone()).collect();
    let result = llm.call(ModuleTag::QuickResponse, &persona.name, blocks).await;
    let slot = slot();
    let turn_index = slot.turn_index;
    let (text, degraded) = match result {
        Ok(out) if !out.text.trim().is_empty() => (out.text.trim().to_string(), None),
        Ok(_) => (fallback_ack(persona, turn_index), Some("quick response was empty".to_string())),
        Err(e) => (fallback_ack(persona, turn_index), Some(format!("quick response: {e}"))),
    };
    Outcome {
        value: slot.build(MessageKind::Quick, text),
        degraded,
        request_blocks: labels,
        calls: 1,
    }
}

/// Inputs for one analytical step.
pub struct AnalyticContext<'a> {
    pub persona: &'a Persona,
    pub window: &'a [Message],
    pub other: &'a OtherState,
    pub brief: &'a KnowledgeBrief,
    pub memory_hits: &'a [(MemoryPiece, f64)],
    pub turn_messages: &'a [Message],
    pub requirements: &'a RequirementSet,
}

fn render_brief(brief: &KnowledgeBrief) -> String {
    if brief.summary.is_empty() {
        String::new()
    } else {
        brief.summary.clone()
    }
}

fn render_memory(hits: &[(MemoryPiece, f64)]) -> String {
    hits.iter().map(|(p, _)| format!("- {}", p.statement)).collect::<Vec<_>>().join("\n")
}

/// Blocks of an analytical request, in a fixed order.
pub fn analytic_blocks(ctx: &AnalyticContext<'_>) -> Vec<ContextBlock> {
    let user_input = ctx
        .turn_messages
        .iter()
        .chain(ctx.window.iter())
        .rev()
        .find(|m| m.is_user())
        .map(|m| m.text.clone())
        .unwrap_or_default();
    vec![
        ContextBlock::new(PERSONA, ctx.persona.describe()),
        ContextBlock::new(WINDOW, render_window(ctx.window)),
        ContextBlock::new(USER_INPUT, user_input),
        ContextBlock::new(OTHER_STATE, serde_json::to_string_pretty(ctx.other).expect("state serializes")),
        ContextBlock::new(KNOWLEDGE, render_brief(ctx.brief)),
        ContextBlock::new(MEMORY, render_memory(ctx.memory_hits)),
        ContextBlock::new(TURN_MESSAGES, render_window(ctx.turn_messages)),
        ContextBlock::new(REQUIREMENTS, ctx.requirements.render()),
    ]
}

/// One analytical message building on everything said so far this turn.
pub async fn analytic_step(
    llm: &Llm,
    ctx: &AnalyticContext<'_>,
    slot: impl FnOnce() -> MessageSlot,
) -> Result<(Message, Vec<String>), ProviderError> {
    let blocks = analytic_blocks(ctx);
    let labels = blocks.iter().map(|b| b.label.clone()).collect();
    let out = llm.call(ModuleTag::AnalyticResponse, &ctx.persona.name, blocks).await?;
    if out.text.trim().is_empty() {
        return Err(ProviderError::Rejected("empty analytical response".into()));
    }
    Ok((slot().build(MessageKind::Analytical, out.text.trim().to_string()), labels))
}

/// Ask whether the turn so far covers each requirement; updates `reqs` monotonically.
///
/// An empty set is vacuously covered and costs no call. Unparseable verdicts leave
/// uncovered items uncovered.
pub async fn assess_coverage(
    llm: &Llm,
    persona_name: &str,
    reqs: &mut RequirementSet,
    turn_messages: &[Message],
) -> Outcome<RethinkVerdict> {
    let mut outcome = Outcome::default_with(RethinkVerdict::from_set(reqs));
    if reqs.is_empty() || reqs.all_covered() {
        return outcome;
    }
    let pending: Vec<_> = reqs
        .items
        .iter()
        .map(|r| serde_json::json!({"id": r.id, "text": r.text, "covered": r.covered}))
        .collect();
    let user_input = turn_messages.iter().find(|m| m.is_user()).map(|m| m.text.clone()).unwrap_or_default();
    let blocks = vec![
        ContextBlock::new(REQUIREMENTS, serde_json::to_string(&pending).expect("serializes")),
        ContextBlock::new(TURN_MESSAGES, render_window(turn_messages)),
        ContextBlock::new(USER_INPUT, user_input),
    ];
    outcome.request_blocks = blocks.iter().map(|b| b.label.clone()).collect();
    outcome.calls = 1;
    match llm.call(ModuleTag::Rethink, persona_name, blocks).await {
        Ok(out) => match parse_structured(&out.text, SchemaId::Coverage) {
            Ok(StructuredOutput::Coverage(map)) => {
                let verdict = RethinkVerdict {
                    coverage: map,
                    ..Default::default()
                };
                reqs.apply(&verdict);
            }
            Ok(_) => unreachable!("schema mismatch"),
            Err(v) => outcome.degrade(format!("coverage verdict: {v}")),
        },
        Err(e) => outcome.degrade(format!("coverage verdict: {e}")),
    }
    outcome.value = RethinkVerdict::from_set(reqs);
    outcome
}
