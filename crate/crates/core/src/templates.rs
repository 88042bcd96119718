//! Prompt templates, one per module tag, with `{placeholder}` substitution.
//!
//! Each tag has a fixed set of context labels it may see. Templates that reference
//! anything else are rejected at load time, and request builders refuse foreign blocks,
//! so a quick-response prompt can never pull in other-awareness output.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::provider::labels::*;
use crate::provider::{ContextBlock, GenerationRequest, ModuleTag};

pub const PERSONA_NAME: &str = "persona_name";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {tag}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { tag: ModuleTag, name: String },
    #[error("template {tag}: unbalanced brace at byte {offset}")]
    Unbalanced { tag: ModuleTag, offset: usize },
    #[error("template directory is missing {0}.txt")]
    Missing(ModuleTag),
    #[error("cannot read template: {0}")]
    Io(#[from] std::io::Error),
}

/// Context labels each module may receive.
pub fn allowed_labels(tag: ModuleTag) -> &'static [&'static str] {
    match tag {
        ModuleTag::SelfAwareness => &[PERSONA, WINDOW, USER_INPUT, SELF_STATE, PHASE, PERSPECTIVE],
        ModuleTag::OtherAwareness => &[PERSONA, WINDOW, USER_INPUT, OTHER_STATE, MEMORY, PERSPECTIVE],
        ModuleTag::MemoryExtract => &[PERSONA, WINDOW, USER_INPUT],
        ModuleTag::QueryRewrite => &[WINDOW, USER_INPUT],
        ModuleTag::KnowledgeSummarize => &[SNIPPETS, USER_INPUT],
        ModuleTag::QuickResponse => &[PERSONA, WINDOW, USER_INPUT, SELF_STATE],
        ModuleTag::AnalyticResponse => &[
            PERSONA,
            WINDOW,
            USER_INPUT,
            OTHER_STATE,
            KNOWLEDGE,
            MEMORY,
            TURN_MESSAGES,
            REQUIREMENTS,
        ],
        ModuleTag::Rethink => &[REQUIREMENTS, TURN_MESSAGES, USER_INPUT],
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    tag: ModuleTag,
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(tag: ModuleTag, text: &str) -> Result<Self, TemplateError> {
        let allowed = allowed_labels(tag);
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < text.len() {
            let c = bytes[i];
            if c == b'{' && bytes.get(i + 1) == Some(&b'{') {
                literal.push('{');
                i += 2;
            } else if c == b'}' && bytes.get(i + 1) == Some(&b'}') {
                literal.push('}');
                i += 2;
            } else if c == b'{' {
                let end = text[i + 1..]
                    .find('}')
                    .ok_or(TemplateError::Unbalanced { tag, offset: i })?;
                let name = &text[i + 1..i + 1 + end];
                if name != PERSONA_NAME && !allowed.contains(&name) {
                    return Err(TemplateError::UnknownPlaceholder {
                        tag,
                        name: name.to_string(),
                    });
                }
                if !literal.is_empty() {
                    pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                }
                pieces.push(Piece::Slot(name.to_string()));
                i += end + 2;
            } else if c == b'}' {
                return Err(TemplateError::Unbalanced { tag, offset: i });
            } else {
                let ch = text[i..].chars().next().expect("char boundary");
                literal.push(ch);
                i += ch.len_utf8();
            }
        }
        if !literal.is_empty() {
            pieces.push(Piece::Literal(literal));
        }
        Ok(Self { tag, pieces })
    }

    pub fn placeholders(&self) -> Vec<&str> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.as_str()),
                Piece::Literal(_) => None,
            })
            .collect()
    }

    /// Substitute slots from `blocks`; absent blocks render as `(none)`.
    pub fn render(&self, persona_name: &str, blocks: &[ContextBlock]) -> String {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(name) if name == PERSONA_NAME => out.push_str(persona_name),
                Piece::Slot(name) => match blocks.iter().find(|b| &b.label == name) {
                    Some(b) if !b.text.is_empty() => out.push_str(&b.text),
                    _ => out.push_str("(none)"),
                },
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Templates {
    version: String,
    by_tag: HashMap<ModuleTag, Template>,
}

macro_rules! builtin {
    ($name:literal) => {
        include_str!(concat!("../templates/", $name, ".txt"))
    };
}

fn builtin_text(tag: ModuleTag) -> &'static str {
    match tag {
        ModuleTag::SelfAwareness => builtin!("self_awareness"),
        ModuleTag::OtherAwareness => builtin!("other_awareness"),
        ModuleTag::MemoryExtract => builtin!("memory_extract"),
        ModuleTag::QueryRewrite => builtin!("query_rewrite"),
        ModuleTag::KnowledgeSummarize => builtin!("knowledge_summarize"),
        ModuleTag::QuickResponse => builtin!("quick_response"),
        ModuleTag::AnalyticResponse => builtin!("analytic_response"),
        ModuleTag::Rethink => builtin!("rethink"),
    }
}

impl Templates {
    /// The templates shipped in the crate's `templates/` directory.
    pub fn builtin() -> Self {
        let by_tag = ModuleTag::ALL
            .into_iter()
            .map(|tag| (tag, Template::parse(tag, builtin_text(tag)).expect("builtin template parses")))
            .collect();
        Self {
            version: include_str!("../templates/VERSION").trim().to_string(),
            by_tag,
        }
    }

    /// Load `templates/<module_tag>.txt` for every tag from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut by_tag = HashMap::new();
        for tag in ModuleTag::ALL {
            let path = dir.join(format!("{}.txt", tag.as_str()));
            if !path.exists() {
                return Err(TemplateError::Missing(tag));
            }
            let text = std::fs::read_to_string(&path)?;
            by_tag.insert(tag, Template::parse(tag, &text)?);
        }
        let version = std::fs::read_to_string(dir.join("VERSION"))
            .map(|v| v.trim().to_string())
            .unwrap_or_else(|_| "unversioned".into());
        Ok(Self { version, by_tag })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn get(&self, tag: ModuleTag) -> &Template {
        &self.by_tag[&tag]
    }

    /// Build a request for `tag`. Panics if a block label is outside the tag's allowed set.
    pub fn request(&self, tag: ModuleTag, persona_name: &str, blocks: Vec<ContextBlock>) -> GenerationRequest {
        let allowed = allowed_labels(tag);
        for b in &blocks {
            assert!(
                allowed.contains(&b.label.as_str()),
                "context block {:?} is not permitted for {tag}",
                b.label
            );
        }
        let mut req = GenerationRequest::new(tag, self.get(tag).render(persona_name, &blocks));
        req.context_blocks = blocks;
        req
    }
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}
