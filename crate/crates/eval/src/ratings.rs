use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{EvalError, STATEMENT_COUNT};

pub const SCORE_MIN: u8 = 1;
pub const SCORE_MAX: u8 = 7;

/// One rater's score for one statement on one test set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub evaluator_id: String,
    pub set_id: String,
    pub statement: u8,
    pub score: u8,
}

impl RatingRecord {
    pub fn new(evaluator_id: &str, set_id: &str, statement: i64, score: i64) -> Result<Self, EvalError> {
        if !(1..=STATEMENT_COUNT as i64).contains(&statement) {
            return Err(EvalError::StatementOutOfRange {
                evaluator_id: evaluator_id.to_string(),
                set_id: set_id.to_string(),
                statement,
            });
        }
        if !(SCORE_MIN as i64..=SCORE_MAX as i64).contains(&score) {
            return Err(EvalError::ScoreOutOfRange {
                evaluator_id: evaluator_id.to_string(),
                set_id: set_id.to_string(),
                score,
            });
        }
        Ok(Self {
            evaluator_id: evaluator_id.to_string(),
            set_id: set_id.to_string(),
            statement: statement as u8,
            score: score as u8,
        })
    }
}

#[derive(Debug, Deserialize)]
struct RawRating {
    evaluator_id: String,
    set_id: String,
    statement: i64,
    score: i64,
}

/// Read `evaluator_id,set_id,statement,score` rows, rejecting out-of-range values.
pub fn read_ratings_csv(reader: impl Read) -> Result<Vec<RatingRecord>, EvalError> {
    csv::Reader::from_reader(reader)
        .deserialize::<RawRating>()
        .map(|row| {
            let r = row?;
            RatingRecord::new(&r.evaluator_id, &r.set_id, r.statement, r.score)
        })
        .collect()
}

pub fn write_ratings_csv(records: &[RatingRecord], writer: impl Write) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementStats {
    pub mean: f64,
    pub count: u64,
    /// Counts for scores 1..=7, in order.
    pub histogram: [u64; 7],
}

impl StatementStats {
    fn from_histogram(histogram: [u64; 7]) -> Self {
        let count: u64 = histogram.iter().sum();
        let total: u64 = histogram.iter().enumerate().map(|(i, c)| (i as u64 + 1) * c).sum();
        Self {
            mean: if count == 0 { 0.0 } else { total as f64 / count as f64 },
            count,
            histogram,
        }
    }
}

/// Per-statement mean, count and score histogram. Statements without ratings are absent.
pub fn aggregate_ratings(records: &[RatingRecord]) -> BTreeMap<u8, StatementStats> {
    let mut hist: BTreeMap<u8, [u64; 7]> = BTreeMap::new();
    for r in records {
        hist.entry(r.statement).or_default()[(r.score - SCORE_MIN) as usize] += 1;
    }
    hist.into_iter().map(|(s, h)| (s, StatementStats::from_histogram(h))).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct PlotRow {
    statement: u8,
    score: u8,
    count: u64,
}

/// `statement,score,count` with all seven scores per rated statement.
pub fn export_plot_data(stats: &BTreeMap<u8, StatementStats>, writer: impl Write) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    for (&statement, s) in stats {
        for (i, &count) in s.histogram.iter().enumerate() {
            w.serialize(PlotRow {
                statement,
                score: i as u8 + SCORE_MIN,
                count,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`export_plot_data`].
pub fn read_plot_data(reader: impl Read) -> Result<BTreeMap<u8, StatementStats>, EvalError> {
    let mut hist: BTreeMap<u8, [u64; 7]> = BTreeMap::new();
    for row in csv::Reader::from_reader(reader).deserialize::<PlotRow>() {
        let row = row?;
        if !(1..=STATEMENT_COUNT).contains(&row.statement) || !(SCORE_MIN..=SCORE_MAX).contains(&row.score) {
            return Err(EvalError::PlotData(format!("row {}/{} out of range", row.statement, row.score)));
        }
        hist.entry(row.statement).or_default()[(row.score - SCORE_MIN) as usize] = row.count;
    }
    Ok(hist.into_iter().map(|(s, h)| (s, StatementStats::from_histogram(h))).collect())
}
