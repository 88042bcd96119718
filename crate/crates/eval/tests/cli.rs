use std::process::Command;

use anthro_core::conversation::{Message, MessageKind};
use anthro_eval::{Sample, TestSet};
use chrono::{TimeZone, Utc};

fn eval(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_eval")).args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn sample_sets_aggregate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let body: String = (0..25)
        .map(|i| {
            let at = t0 + chrono::Duration::milliseconds(i);
            let m = if i % 2 == 0 {
                Message::user("conv1", (i / 2) as u64, format!("conv1-{i:05}"), "hi", at)
            } else {
                Message::agent("conv1", (i / 2) as u64, format!("conv1-{i:05}"), MessageKind::Quick, "hello", at)
            };
            m.to_json_line() + "\n"
        })
        .collect();
    let transcript = dir.path().join("conv1.jsonl");
    std::fs::write(&transcript, body).unwrap();
    let samples = dir.path().join("samples.jsonl");
    eval(&["sample", "--in", transcript.to_str().unwrap(), "--width", "20", "--stride", "1", "--out", samples.to_str().unwrap()]);
    let pool: Vec<Sample> =
        std::fs::read_to_string(&samples).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(pool.len(), 6);
    assert_eq!(pool[5].start_index, 5);

    let out = eval(&["sets", "--in", samples.to_str().unwrap(), "--per-set", "5", "--n-sets", "30", "--seed", "9"]);
    let sets: Vec<TestSet> =
        String::from_utf8(out.stdout.clone()).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(sets.len(), 30);
    let again = eval(&["sets", "--in", samples.to_str().unwrap(), "--per-set", "5", "--n-sets", "30", "--seed", "9"]);
    assert_eq!(out.stdout, again.stdout);

    let ratings = dir.path().join("ratings.csv");
    std::fs::write(&ratings, "evaluator_id,set_id,statement,score\ne1,set-001,1,7\ne2,set-002,1,5\ne1,set-001,2,3\n").unwrap();
    let plot = dir.path().join("plot.csv");
    let out = eval(&["aggregate", "--ratings", ratings.to_str().unwrap(), "--plot-csv", plot.to_str().unwrap()]);
    let first: serde_json::Value = serde_json::from_str(String::from_utf8(out.stdout).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["statement"], 1);
    assert_eq!(first["mean"], 6.0);
    assert_eq!(std::fs::read_to_string(&plot).unwrap().lines().count(), 1 + 14);

    std::fs::write(&ratings, "evaluator_id,set_id,statement,score\ne1,set-001,1,9\n").unwrap();
    let bad = Command::new(env!("CARGO_BIN_EXE_eval")).args(["aggregate", "--ratings", ratings.to_str().unwrap()]).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("score 9"));
}
