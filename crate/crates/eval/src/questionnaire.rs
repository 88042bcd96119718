use serde::{Deserialize, Serialize};

pub const STATEMENT_COUNT: u8 = 8;

const STATEMENTS_JSON: &str = include_str!("../data/statements.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scale {
    pub min: u8,
    pub max: u8,
    pub min_label: String,
    pub max_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub index: u8,
    /// `conversational` or `social`.
    pub dimension: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub scale: Scale,
    pub statements: Vec<Statement>,
    pub open_question: String,
}

/// The bundled rater questionnaire.
pub fn questionnaire() -> Questionnaire {
    serde_json::from_str(STATEMENTS_JSON).expect("bundled questionnaire is valid")
}
