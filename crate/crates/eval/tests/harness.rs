use std::collections::{BTreeMap, BTreeSet};

use anthro_core::conversation::{Message, MessageKind};
use anthro_eval::*;
use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn transcript(m: usize) -> Vec<Message> {
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    (0..m)
        .map(|i| {
            let at = t0 + chrono::Duration::milliseconds(i as i64);
            let id = format!("c-{i:05}");
            if i % 3 == 0 {
                Message::user("c", (i / 3) as u64, id, format!("user {i}"), at)
            } else {
                Message::agent("c", (i / 3) as u64, id, MessageKind::Analytical, format!("agent {i}"), at)
            }
        })
        .collect()
}

/// Slide a window by hand and collect the starting offsets.
fn brute_offsets(m: usize, width: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + width <= m {
        out.push(start);
        start += stride;
    }
    out
}

fn pool(n: usize) -> Vec<Sample> {
    sample_windows(&transcript(n + 1), "c", 2, 1).unwrap()
}

#[test]
fn window_count_examples() {
    assert_eq!(sample_windows(&transcript(20), "c", 20, 1).unwrap().len(), 1);
    assert_eq!(sample_windows(&transcript(25), "c", 20, 1).unwrap().len(), 6);
    assert!(sample_windows(&transcript(19), "c", 20, 1).unwrap().is_empty());
    assert!(matches!(sample_windows(&transcript(5), "c", 0, 1), Err(EvalError::InvalidParameter { name: "width" })));
    assert!(matches!(sample_windows(&transcript(5), "c", 2, 0), Err(EvalError::InvalidParameter { name: "stride" })));
}

proptest! {
    #[test]
    fn window_count_matches_brute_force(m in 0usize..=10_000, width in 1usize..=200, stride in 1usize..=50) {
        prop_assert_eq!(window_count(m, width, stride), brute_offsets(m, width, stride).len());
    }

    #[test]
    fn windows_are_contiguous_slices(m in 0usize..=300, width in 1usize..=40, stride in 1usize..=10) {
        let msgs = transcript(m);
        let samples = sample_windows(&msgs, "c", width, stride).unwrap();
        let offsets = brute_offsets(m, width, stride);
        prop_assert_eq!(samples.len(), offsets.len());
        for (s, start) in samples.iter().zip(offsets) {
            prop_assert_eq!(s.start_index, start);
            prop_assert_eq!(s.messages.len(), width);
            prop_assert_eq!(&s.messages[..], &msgs[start..start + width]);
            prop_assert_eq!(&s.source_session, "c");
        }
        let ids: BTreeSet<_> = samples.iter().map(|s| &s.id).collect();
        prop_assert_eq!(ids.len(), samples.len());
    }

    #[test]
    fn sets_are_deterministic_and_distinct_within(n in 1usize..400, per in 1usize..8, sets in 0usize..40, seed: u64) {
        let samples = pool(n);
        let out = build_sets(&samples, per, sets, seed);
        if n < per {
            let insufficient = matches!(out, Err(EvalError::InsufficientSamples { .. }));
            prop_assert!(insufficient);
        } else {
            let out = out.unwrap();
            prop_assert_eq!(&out, &build_sets(&samples, per, sets, seed).unwrap());
            prop_assert_eq!(out.len(), sets);
            let known: BTreeSet<_> = samples.iter().map(|s| s.id.clone()).collect();
            for set in &out {
                let ids: BTreeSet<_> = set.sample_ids.iter().cloned().collect();
                prop_assert_eq!(ids.len(), per);
                prop_assert!(ids.is_subset(&known));
            }
        }
    }
}

#[test]
fn set_examples() {
    let five = pool(5);
    let sets = build_sets(&five, 5, 1, 7).unwrap();
    assert_eq!(sets[0].sample_ids, five.iter().map(|s| s.id.clone()).collect::<Vec<_>>());

    let full = pool(340);
    let sets = build_sets(&full, 5, 30, 2024).unwrap();
    assert_eq!(sets.len(), 30);
    assert!(sets.iter().all(|s| s.sample_ids.len() == 5));
    assert_eq!(sets.iter().map(|s| s.set_id.as_str()).collect::<BTreeSet<_>>().len(), 30);
    assert_ne!(sets, build_sets(&full, 5, 30, 2025).unwrap());

    assert!(matches!(
        build_sets(&pool(4), 5, 1, 0),
        Err(EvalError::InsufficientSamples { needed: 5, available: 4 })
    ));

    // Independent draws from a small pool must revisit samples across sets.
    let small = build_sets(&pool(6), 5, 30, 1).unwrap();
    let mut seen = BTreeMap::<&str, usize>::new();
    for s in &small {
        for id in &s.sample_ids {
            *seen.entry(id).or_default() += 1;
        }
    }
    assert!(seen.values().any(|&c| c > 1));
}

#[test]
fn aggregate_examples() {
    let recs: Vec<_> = [7, 6, 5].iter().map(|&s| RatingRecord::new("e1", "set-001", 1, s).unwrap()).collect();
    let stats = aggregate_ratings(&recs);
    assert_eq!(stats.len(), 1);
    assert_eq!(stats[&1].mean, 6.0);
    assert_eq!(stats[&1].count, 3);
    assert_eq!(stats[&1].histogram, [0, 0, 0, 0, 1, 1, 1]);
    assert!(aggregate_ratings(&[]).is_empty());
}

#[test]
fn ingest_rejects_out_of_range() {
    for (row, score_err) in [("e,s,1,0", true), ("e,s,1,8", true), ("e,s,9,4", false), ("e,s,0,4", false)] {
        let csv = format!("evaluator_id,set_id,statement,score\n{row}\n");
        let err = read_ratings_csv(csv.as_bytes()).unwrap_err();
        if score_err {
            assert!(matches!(err, EvalError::ScoreOutOfRange { .. }), "{row}: {err}");
        } else {
            assert!(matches!(err, EvalError::StatementOutOfRange { .. }), "{row}: {err}");
        }
    }
    let ok = read_ratings_csv("evaluator_id,set_id,statement,score\ne1,set-001,8,7\n".as_bytes()).unwrap();
    assert_eq!(ok, vec![RatingRecord::new("e1", "set-001", 8, 7).unwrap()]);
}

fn random_records(n: usize, seed: u64) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let e = format!("e{}", rng.random_range(1..=12));
            let s = format!("set-{:03}", rng.random_range(1..=30));
            RatingRecord::new(&e, &s, rng.random_range(1..=8), rng.random_range(1..=7)).unwrap()
        })
        .collect()
}

#[test]
fn aggregate_matches_summation_oracle() {
    let recs = random_records(200, 11);
    let stats = aggregate_ratings(&recs);
    for statement in 1..=8u8 {
        let scores: Vec<f64> = recs.iter().filter(|r| r.statement == statement).map(|r| r.score as f64).collect();
        if scores.is_empty() {
            assert!(!stats.contains_key(&statement));
            continue;
        }
        let s = &stats[&statement];
        assert_eq!(s.count as usize, scores.len());
        assert!((s.mean - scores.iter().sum::<f64>() / scores.len() as f64).abs() < 1e-12);
        assert_eq!(s.histogram.iter().sum::<u64>(), s.count);
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= s.mean && s.mean <= hi);
    }
}

#[test]
fn plot_data_shape_and_round_trip() {
    let one = aggregate_ratings(&[RatingRecord::new("e", "s", 3, 4).unwrap()]);
    let mut buf = Vec::new();
    export_plot_data(&one, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), "statement,score,count");
    assert_eq!(text.lines().count() - 1, 7);
    assert_eq!(read_plot_data(buf.as_slice()).unwrap(), one);

    // 12 raters, 3 sets each, 8 statements.
    let mut recs = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for e in 1..=12 {
        for _ in 0..3 {
            let set = format!("set-{:03}", rng.random_range(1..=30));
            for st in 1..=8 {
                recs.push(RatingRecord::new(&format!("e{e}"), &set, st, rng.random_range(1..=7)).unwrap());
            }
        }
    }
    let stats = aggregate_ratings(&recs);
    let mut buf = Vec::new();
    export_plot_data(&stats, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count() - 1, 56);
    assert_eq!(read_plot_data(buf.as_slice()).unwrap(), stats);

    let mut csv = Vec::new();
    write_ratings_csv(&recs, &mut csv).unwrap();
    assert_eq!(read_ratings_csv(csv.as_slice()).unwrap(), recs);
}
