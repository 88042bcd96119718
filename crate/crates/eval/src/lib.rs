//! Evaluation harness: sliding-window samples over transcripts, random rater test sets,
//! questionnaire rating ingestion and per-statement aggregation.

mod questionnaire;
mod ratings;
mod samples;

pub use questionnaire::{questionnaire, Questionnaire, Scale, Statement, STATEMENT_COUNT};
pub use ratings::{
    aggregate_ratings, export_plot_data, read_plot_data, read_ratings_csv, write_ratings_csv, RatingRecord,
    StatementStats, SCORE_MAX, SCORE_MIN,
};
pub use samples::{build_sets, sample_windows, window_count, Sample, TestSet};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{name} must be at least 1")]
    InvalidParameter { name: &'static str },
    #[error("need at least {needed} samples for a set, pool has {available}")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("score {score} outside {min}..={max} (evaluator {evaluator_id}, set {set_id})", min = SCORE_MIN, max = SCORE_MAX)]
    ScoreOutOfRange { evaluator_id: String, set_id: String, score: i64 },
    #[error("statement {statement} outside 1..={max} (evaluator {evaluator_id}, set {set_id})", max = STATEMENT_COUNT)]
    StatementOutOfRange { evaluator_id: String, set_id: String, statement: i64 },
    #[error("plot data: {0}")]
    PlotData(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
