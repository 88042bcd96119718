//! Trace events: one typed record per internal step of a turn.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    TurnStarted,
    MemoryRetrieved,
    KnowledgeBrief,
    OtherState,
    QuickEmitted,
    AnalyticalEmitted,
    RethinkVerdict,
    LoopDecision,
    TurnConcluded,
    SelfStateUpdated,
    MemoryExtracted,
    Degraded,
    /// Session-level, outside any turn: explicit conclusion with final consolidation.
    SessionConcluded,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::TurnStarted => "turn_started",
            TraceKind::MemoryRetrieved => "memory_retrieved",
            TraceKind::KnowledgeBrief => "knowledge_brief",
            TraceKind::OtherState => "other_state",
            TraceKind::QuickEmitted => "quick_emitted",
            TraceKind::AnalyticalEmitted => "analytical_emitted",
            TraceKind::RethinkVerdict => "rethink_verdict",
            TraceKind::LoopDecision => "loop_decision",
            TraceKind::TurnConcluded => "turn_concluded",
            TraceKind::SelfStateUpdated => "self_state_updated",
            TraceKind::MemoryExtracted => "memory_extracted",
            TraceKind::Degraded => "degraded",
            TraceKind::SessionConcluded => "session_concluded",
        }
    }

    pub fn is_phase_a(self) -> bool {
        matches!(
            self,
            TraceKind::QuickEmitted | TraceKind::OtherState | TraceKind::MemoryRetrieved | TraceKind::KnowledgeBrief
        )
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub turn_index: u64,
    pub kind: TraceKind,
    pub wall_ms: u64,
    pub payload: Value,
}

impl TraceEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace event serializes")
    }

    /// Context labels recorded for the request behind this event, if any.
    pub fn request_blocks(&self) -> Vec<String> {
        self.payload
            .get("request_blocks")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default()
    }
}

pub fn parse_trace_jsonl(body: &str) -> Result<Vec<TraceEvent>, serde_json::Error> {
    body.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("turn {turn_index}: {reason} (kinds: {kinds})")]
pub struct TraceGrammarError {
    pub turn_index: u64,
    pub reason: String,
    pub kinds: String,
}

/// Check one completed turn's kinds against
/// `turn_started · shuffle(quick_emitted?, other_state, memory_retrieved, knowledge_brief)
///  · (analytical_emitted · rethink_verdict? · loop_decision)* · turn_concluded
///  · self_state_updated · memory_extracted`.
///
/// `degraded` annotations may appear anywhere after `turn_started`.
pub fn check_turn_kinds(turn_index: u64, kinds: &[TraceKind]) -> Result<(), TraceGrammarError> {
    let core: Vec<TraceKind> = kinds.iter().copied().filter(|k| *k != TraceKind::Degraded).collect();
    let fail = |reason: &str| TraceGrammarError {
        turn_index,
        reason: reason.to_string(),
        kinds: kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(","),
    };
    if kinds.first() != Some(&TraceKind::TurnStarted) {
        return Err(fail("turn must open with turn_started"));
    }
    let mut i = 1;
    let mut seen = (0, 0, 0, 0);
    while i < core.len() && core[i].is_phase_a() {
        match core[i] {
            TraceKind::QuickEmitted => seen.0 += 1,
            TraceKind::OtherState => seen.1 += 1,
            TraceKind::MemoryRetrieved => seen.2 += 1,
            TraceKind::KnowledgeBrief => seen.3 += 1,
            _ => unreachable!(),
        }
        i += 1;
    }
    if seen.0 > 1 || seen.1 != 1 || seen.2 != 1 || seen.3 != 1 {
        return Err(fail("phase A must hold other_state, memory_retrieved, knowledge_brief once and quick_emitted at most once"));
    }
    while i < core.len() && core[i] == TraceKind::AnalyticalEmitted {
        i += 1;
        if core.get(i) == Some(&TraceKind::RethinkVerdict) {
            i += 1;
        }
        if core.get(i) != Some(&TraceKind::LoopDecision) {
            return Err(fail("analytical_emitted must be followed by loop_decision"));
        }
        i += 1;
    }
    let tail = [TraceKind::TurnConcluded, TraceKind::SelfStateUpdated, TraceKind::MemoryExtracted];
    if core[i..] != tail {
        return Err(fail("turn must end with turn_concluded, self_state_updated, memory_extracted"));
    }
    Ok(())
}

/// Validate a whole session trace: gap-free seq from 0, non-decreasing wall_ms within
/// each turn, and the grammar for every completed turn. A trailing incomplete turn is
/// reported as an error only when `require_complete` is set.
pub fn check_trace(events: &[TraceEvent], require_complete: bool) -> Result<usize, TraceGrammarError> {
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 {
            return Err(TraceGrammarError {
                turn_index: e.turn_index,
                reason: format!("seq gap: expected {i}, found {}", e.seq),
                kinds: String::new(),
            });
        }
    }
    let mut turns = 0;
    let mut start = 0;
    while start < events.len() {
        if events[start].kind == TraceKind::SessionConcluded {
            start += 1;
            continue;
        }
        let turn = events[start].turn_index;
        let mut end = start;
        while end < events.len() && events[end].turn_index == turn && events[end].kind != TraceKind::SessionConcluded {
            end += 1;
        }
        let slice = &events[start..end];
        if slice.windows(2).any(|w| w[1].wall_ms < w[0].wall_ms) {
            return Err(TraceGrammarError {
                turn_index: turn,
                reason: "wall_ms decreased".into(),
                kinds: String::new(),
            });
        }
        let kinds: Vec<TraceKind> = slice.iter().map(|e| e.kind).collect();
        let complete = kinds.last() == Some(&TraceKind::MemoryExtracted);
        if complete || require_complete || end < events.len() {
            check_turn_kinds(turn, &kinds)?;
        }
        turns += 1;
        start = end;
    }
    Ok(turns)
}

#[cfg(test)]
mod tests {
    use super::TraceKind::*;
    use super::*;

    #[test]
    fn golden_kind_sequence_matches() {
        let kinds = [
            TurnStarted,
            QuickEmitted,
            OtherState,
            MemoryRetrieved,
            KnowledgeBrief,
            AnalyticalEmitted,
            RethinkVerdict,
            LoopDecision,
            TurnConcluded,
            SelfStateUpdated,
            MemoryExtracted,
        ];
        check_turn_kinds(0, &kinds).unwrap();
    }

    #[test]
    fn phase_a_interleaving_and_zero_loops() {
        let kinds = [
            TurnStarted,
            KnowledgeBrief,
            Degraded,
            OtherState,
            QuickEmitted,
            MemoryRetrieved,
            TurnConcluded,
            SelfStateUpdated,
            MemoryExtracted,
        ];
        check_turn_kinds(0, &kinds).unwrap();
    }

    #[test]
    fn violations_detected() {
        let missing_other = [TurnStarted, QuickEmitted, MemoryRetrieved, KnowledgeBrief, TurnConcluded, SelfStateUpdated, MemoryExtracted];
        assert!(check_turn_kinds(0, &missing_other).is_err());
        let no_decision = [
            TurnStarted, OtherState, MemoryRetrieved, KnowledgeBrief, AnalyticalEmitted, TurnConcluded, SelfStateUpdated,
            MemoryExtracted,
        ];
        assert!(check_turn_kinds(0, &no_decision).is_err());
        let wrong_tail = [TurnStarted, OtherState, MemoryRetrieved, KnowledgeBrief, TurnConcluded, MemoryExtracted, SelfStateUpdated];
        assert!(check_turn_kinds(0, &wrong_tail).is_err());
        let two_quick = [
            TurnStarted, QuickEmitted, QuickEmitted, OtherState, MemoryRetrieved, KnowledgeBrief, TurnConcluded,
            SelfStateUpdated, MemoryExtracted,
        ];
        assert!(check_turn_kinds(0, &two_quick).is_err());
    }
}
