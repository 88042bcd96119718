//! Built-in demo persona and provider script, used by the scripted server mode and tests.

use crate::conversation::{load_persona, Persona};
use crate::provider::{ScriptEntry, ScriptedProvider};

pub const DEMO_PERSONA: &str = include_str!("../personas/mira.json");
pub const DEMO_SCRIPT: &str = include_str!("../scripts/demo.jsonl");

pub fn demo_persona() -> Persona {
    load_persona(DEMO_PERSONA).expect("bundled persona is valid")
}

pub fn demo_entries() -> Vec<ScriptEntry> {
    DEMO_SCRIPT
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("bundled script line is valid"))
        .collect()
}

/// The demo script with the same stub latency on every entry.
pub fn demo_provider(latency_ms: u64) -> ScriptedProvider {
    ScriptedProvider::new(demo_entries().into_iter().map(|e| e.with_latency(latency_ms))).expect("bundled script is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_fixtures_load() {
        let p = demo_persona();
        assert_eq!(p.name, "Mira");
        assert_eq!(p.memories.len(), 3);
        assert!(demo_entries().len() >= 8);
        ScriptedProvider::from_jsonl(DEMO_SCRIPT).unwrap();
    }
}
