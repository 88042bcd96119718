use chrono::{DateTime, Utc};

use super::{MemoryPiece, SourceTurn};
use crate::conversation::{render_window, Message, Persona};
use crate::llm::Llm;
use crate::provider::labels::*;
use crate::provider::structured::ExtractedPiece;
use crate::provider::{parse_structured, ContextBlock, ModuleTag, ProviderError, SchemaId, SchemaViolation, StructuredOutput};

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Schema(#[from] SchemaViolation),
}

/// Ask the model for declarative memory pieces found in `window`.
///
/// Ids are `mem-<turn>-<n>` so extraction is reproducible under a scripted provider.
pub async fn extract_pieces(
    llm: &Llm,
    window: &[Message],
    persona: &Persona,
    turn_index: u64,
    now: DateTime<Utc>,
) -> Result<Vec<MemoryPiece>, ExtractError> {
    assert!(!window.is_empty(), "extraction window must be non-empty");
    let last_user = window
        .iter()
        .rev()
        .find(|m| m.is_user())
        .map(|m| m.text.clone())
        .unwrap_or_default();
    let blocks = vec![
        ContextBlock::new(PERSONA, persona.describe()),
        ContextBlock::new(WINDOW, render_window(window)),
        ContextBlock::new(USER_INPUT, last_user),
    ];
    let out = llm.call(ModuleTag::MemoryExtract, &persona.name, blocks).await?;
    let StructuredOutput::MemoryPieces(raw) = parse_structured(&out.text, SchemaId::MemoryPieces)? else {
        unreachable!("schema mismatch")
    };
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(n, ExtractedPiece { owner, category, statement })| MemoryPiece {
            id: format!("mem-{turn_index:05}-{n:02}"),
            owner,
            category,
            statement: statement.trim().to_string(),
            source_turn: SourceTurn::Turn(turn_index),
            created_at: now,
            superseded_by: None,
        })
        .collect())
}

/// Persona-seeded agent memory, marked `configured`.
pub fn seed_pieces(persona: &Persona, now: DateTime<Utc>) -> Vec<MemoryPiece> {
    persona
        .memories
        .iter()
        .filter(|s| !s.trim().is_empty())
        .enumerate()
        .map(|(n, s)| MemoryPiece {
            id: format!("seed-{n:03}"),
            owner: super::Owner::Agent,
            category: super::Category::Fact,
            statement: s.trim().to_string(),
            source_turn: SourceTurn::Configured,
            created_at: now,
            superseded_by: None,
        })
        .collect()
}
