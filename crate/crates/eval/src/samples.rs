use anthro_core::conversation::Message;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::EvalError;

/// A contiguous window of `width` messages from one transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub source_session: String,
    pub start_index: usize,
    pub messages: Vec<Message>,
}

/// Samples handed to one rater.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSet {
    pub set_id: String,
    pub sample_ids: Vec<String>,
}

/// Number of windows of `width` at offsets 0, stride, 2*stride, ... that fit in `m` messages.
pub fn window_count(m: usize, width: usize, stride: usize) -> usize {
    if width == 0 || stride == 0 || m < width {
        0
    } else {
        (m - width) / stride + 1
    }
}

pub fn sample_windows(
    messages: &[Message],
    source_session: &str,
    width: usize,
    stride: usize,
) -> Result<Vec<Sample>, EvalError> {
    if width == 0 {
        return Err(EvalError::InvalidParameter { name: "width" });
    }
    if stride == 0 {
        return Err(EvalError::InvalidParameter { name: "stride" });
    }
    Ok((0..window_count(messages.len(), width, stride))
        .map(|k| {
            let start = k * stride;
            Sample {
                id: format!("{source_session}-w{start:05}"),
                source_session: source_session.to_string(),
                start_index: start,
                messages: messages[start..start + width].to_vec(),
            }
        })
        .collect())
}

/// `n_sets` sets of `per_set` distinct samples each. Sets are drawn independently,
/// so a sample may appear in several sets.
pub fn build_sets(samples: &[Sample], per_set: usize, n_sets: usize, seed: u64) -> Result<Vec<TestSet>, EvalError> {
    if per_set == 0 {
        return Err(EvalError::InvalidParameter { name: "per_set" });
    }
    if samples.len() < per_set {
        return Err(EvalError::InsufficientSamples {
            needed: per_set,
            available: samples.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_sets)
        .map(|i| {
            let mut picked = index::sample(&mut rng, samples.len(), per_set).into_vec();
            picked.sort_unstable();
            TestSet {
                set_id: format!("set-{:03}", i + 1),
                sample_ids: picked.into_iter().map(|j| samples[j].id.clone()).collect(),
            }
        })
        .collect())
}
