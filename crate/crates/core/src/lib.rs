//! Conversation engine with a persona, two awareness models, long-term memory,
//! and a quick/analytical responder loop. Every turn emits a typed trace.

pub mod awareness;
pub mod clock;
pub mod conversation;
pub mod fixtures;
pub mod llm;
pub mod memory;
pub mod orchestrator;
pub mod persist;
pub mod provider;
pub mod responders;
pub mod templates;
pub mod trace;
