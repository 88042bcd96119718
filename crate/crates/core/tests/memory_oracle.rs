use std::collections::BTreeSet;

use anthro_core::memory::{Category, MemoryPiece, MemoryStore, Owner, SourceTurn};
use chrono::{TimeZone, Utc};
use proptest::prelude::*;

const VOCAB: [&str; 24] = [
    "the", "user", "likes", "tea", "coffee", "is", "from", "lisbon", "porto", "cat", "dog", "name", "sam", "alex",
    "works", "at", "a", "bakery", "school", "favorite", "color", "blue", "green", "was",
];

fn tokens(s: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut cur = String::new();
    for c in s.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

/// Brute force: score every live piece, sort by the documented rank, keep k.
fn oracle(pieces: &[MemoryPiece], query: &str, k: usize) -> Vec<(String, f64)> {
    let q = tokens(query);
    let mut scored: Vec<(&MemoryPiece, f64)> = pieces
        .iter()
        .filter(|p| p.superseded_by.is_none())
        .map(|p| {
            let t = tokens(&p.statement);
            let inter = q.intersection(&t).count() as f64;
            let union = q.union(&t).count() as f64;
            (p, if union == 0.0 { 0.0 } else { inter / union })
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then(b.0.created_at.cmp(&a.0.created_at))
            .then(a.0.id.cmp(&b.0.id))
    });
    scored.into_iter().take(k).map(|(p, s)| (p.id.clone(), s)).collect()
}

fn statement() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(VOCAB.to_vec()), 1..7).prop_map(|w| {
        let mut s = w.join(" ");
        if s.len() % 3 == 0 {
            s.push('.');
        }
        s
    })
}

fn corpus() -> impl Strategy<Value = Vec<MemoryPiece>> {
    let owner = prop::sample::select(vec![Owner::User, Owner::Agent]);
    let category = prop::sample::select(vec![Category::Preference, Category::Fact, Category::Event]);
    prop::collection::vec((owner, category, statement(), 0i64..50), 0..300).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(n, (owner, category, statement, t))| MemoryPiece {
                id: format!("m{n:05}"),
                owner,
                category,
                statement,
                source_turn: SourceTurn::Turn(n as u64),
                created_at: Utc.timestamp_millis_opt(1_700_000_000_000 + t * 1000).unwrap(),
                superseded_by: None,
            })
            .collect()
    })
}

fn store_of(pieces: &[MemoryPiece]) -> MemoryStore {
    let mut store = MemoryStore::new();
    for p in pieces {
        store.store(p.clone()).unwrap();
    }
    store
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn retrieve_matches_brute_force(pieces in corpus(), query in statement(), k in 1usize..8) {
        let store = store_of(&pieces);
        let got: Vec<(String, f64)> = store.retrieve(&query, k).into_iter().map(|(p, s)| (p.id, s)).collect();
        prop_assert_eq!(got, oracle(&pieces, &query, k));
    }

    #[test]
    fn consolidation_is_idempotent_and_sound(pieces in corpus(), query in statement()) {
        let mut store = store_of(&pieces);
        store.consolidate().unwrap();
        let once: Vec<MemoryPiece> = store.pieces().cloned().collect();
        let again = store.consolidate().unwrap();
        prop_assert!(again.is_noop());
        let twice: Vec<MemoryPiece> = store.pieces().cloned().collect();
        prop_assert_eq!(&once, &twice);
        prop_assert!(store.supersession_is_acyclic());

        // No duplicate live statements remain.
        let mut keys = BTreeSet::new();
        for p in store.live() {
            let norm = p.statement.to_lowercase().trim_end_matches('.').to_string();
            prop_assert!(keys.insert((p.owner, p.category, norm)), "duplicate live {}", p.id);
        }
        // Retrieval after consolidation still agrees with the oracle.
        let got: Vec<(String, f64)> = store.retrieve(&query, 5).into_iter().map(|(p, s)| (p.id, s)).collect();
        prop_assert_eq!(got, oracle(&twice, &query, 5));
    }
}

#[test]
fn persisted_store_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    let pieces: Vec<MemoryPiece> = (0..20)
        .map(|n| MemoryPiece {
            id: format!("m{n}"),
            owner: Owner::User,
            category: Category::Preference,
            statement: format!("the user likes {}", VOCAB[n % 5]),
            source_turn: SourceTurn::Turn(n as u64),
            created_at: Utc.timestamp_millis_opt(n as i64 * 1000).unwrap(),
            superseded_by: None,
        })
        .collect();
    let mut store = MemoryStore::open(&path).unwrap();
    for p in &pieces {
        store.store(p.clone()).unwrap();
    }
    let report = store.consolidate().unwrap();
    assert!(report.merged > 0);
    let reopened = MemoryStore::open(&path).unwrap();
    assert_eq!(reopened.pieces().cloned().collect::<Vec<_>>(), store.pieces().cloned().collect::<Vec<_>>());
}
