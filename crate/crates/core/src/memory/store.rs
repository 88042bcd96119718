use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{normalize_statement, tokenize, Category, MemoryError, MemoryPiece, Owner};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsolidationReport {
    pub merged: usize,
    pub conflicts_resolved: usize,
}

impl ConsolidationReport {
    pub fn is_noop(&self) -> bool {
        self.merged == 0 && self.conflicts_resolved == 0
    }
}

/// (created_at, id) of live pieces sharing an owner, category and key.
type Groups = BTreeMap<(Owner, Category, String), Vec<(chrono::DateTime<chrono::Utc>, String)>>;

#[derive(Debug, Clone)]
struct Entry {
    piece: MemoryPiece,
    tokens: BTreeSet<String>,
}

/// Memory pieces with an inverted token index for retrieval.
///
/// When bound to a file, every `store` appends one JSON line and consolidation
/// rewrites the file.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    entries: BTreeMap<String, Entry>,
    index: HashMap<String, HashSet<String>>,
    path: Option<PathBuf>,
}

#[derive(PartialEq)]
struct Ranked<'a> {
    score: f64,
    piece: &'a MemoryPiece,
}

impl Eq for Ranked<'_> {}

impl Ord for Ranked<'_> {
    // "Greater" means ranked higher: score, then newer, then smaller id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| self.piece.created_at.cmp(&other.piece.created_at))
            .then_with(|| other.piece.id.cmp(&self.piece.id))
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const COPULAS: [&str; 5] = ["is", "are", "was", "were", "am"];

/// `X is Y` split into (`X is`, `Y`) on the last copula with content on both sides.
pub(crate) fn conflict_split(statement: &str) -> Option<(String, String)> {
    let norm = normalize_statement(statement);
    let words: Vec<&str> = norm.split(' ').collect();
    let pos = words
        .iter()
        .enumerate()
        .rev()
        .find(|(i, w)| *i > 0 && *i + 1 < words.len() && COPULAS.contains(w))
        .map(|(i, _)| i)?;
    Some((words[..=pos].join(" "), words[pos + 1..].join(" ")))
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Open (or create) a store persisted at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, MemoryError> {
        let path = path.into();
        let mut store = Self::new();
        if path.exists() {
            let body = std::fs::read_to_string(&path)?;
            for (idx, line) in body.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let piece: MemoryPiece = serde_json::from_str(line).map_err(|e| MemoryError::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                store.insert_unchecked(piece);
            }
            store.check_references()?;
        } else if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        store.path = Some(path);
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MemoryPiece> {
        self.entries.get(id).map(|e| &e.piece)
    }

    pub fn pieces(&self) -> impl Iterator<Item = &MemoryPiece> {
        self.entries.values().map(|e| &e.piece)
    }

    pub fn live(&self) -> impl Iterator<Item = &MemoryPiece> {
        self.pieces().filter(|p| p.is_live())
    }

    fn insert_unchecked(&mut self, piece: MemoryPiece) {
        let tokens = tokenize(&piece.statement);
        for t in &tokens {
            self.index.entry(t.clone()).or_default().insert(piece.id.clone());
        }
        self.entries.insert(piece.id.clone(), Entry { piece, tokens });
    }

    fn remove(&mut self, id: &str) {
        if let Some(entry) = self.entries.remove(id) {
            for t in &entry.tokens {
                if let Some(ids) = self.index.get_mut(t) {
                    ids.remove(id);
                    if ids.is_empty() {
                        self.index.remove(t);
                    }
                }
            }
        }
    }

    fn check_references(&self) -> Result<(), MemoryError> {
        for e in self.entries.values() {
            if let Some(target) = &e.piece.superseded_by {
                if !self.entries.contains_key(target) {
                    return Err(MemoryError::DanglingSupersession {
                        id: e.piece.id.clone(),
                        target: target.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn store(&mut self, piece: MemoryPiece) -> Result<String, MemoryError> {
        if self.entries.contains_key(&piece.id) {
            return Err(MemoryError::DuplicateId(piece.id));
        }
        if piece.statement.trim().is_empty() {
            return Err(MemoryError::EmptyStatement(piece.id));
        }
        if let Some(target) = &piece.superseded_by {
            if !self.entries.contains_key(target) {
                return Err(MemoryError::DanglingSupersession {
                    id: piece.id.clone(),
                    target: target.clone(),
                });
            }
        }
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(file, "{}", serde_json::to_string(&piece).expect("piece serializes"))?;
        }
        let id = piece.id.clone();
        self.insert_unchecked(piece);
        Ok(id)
    }

    /// Top-k live pieces by score (ties: newer first, then id), excluding zero scores.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<(MemoryPiece, f64)> {
        let k = k.max(1);
        let q = tokenize(query);
        let mut candidates: HashSet<&str> = HashSet::new();
        for t in &q {
            if let Some(ids) = self.index.get(t) {
                candidates.extend(ids.iter().map(String::as_str));
            }
        }
        // min-heap of the best k seen so far
        let mut heap: BinaryHeap<std::cmp::Reverse<Ranked<'_>>> = BinaryHeap::with_capacity(k + 1);
        for id in candidates {
            let entry = &self.entries[id];
            if !entry.piece.is_live() {
                continue;
            }
            let inter = q.intersection(&entry.tokens).count();
            if inter == 0 {
                continue;
            }
            let union = q.len() + entry.tokens.len() - inter;
            let ranked = Ranked {
                score: inter as f64 / union as f64,
                piece: &entry.piece,
            };
            if heap.len() < k {
                heap.push(std::cmp::Reverse(ranked));
            } else if heap.peek().is_some_and(|worst| ranked > worst.0) {
                heap.pop();
                heap.push(std::cmp::Reverse(ranked));
            }
        }
        let mut out: Vec<Ranked<'_>> = heap.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out.into_iter().map(|r| (r.piece.clone(), r.score)).collect()
    }

    /// Top-k with a caller-supplied scorer. Scans every live piece.
    pub fn retrieve_with(&self, scorer: &dyn super::Scorer, query: &str, k: usize) -> Vec<(MemoryPiece, f64)> {
        let mut ranked: Vec<Ranked<'_>> = self
            .entries
            .values()
            .filter(|e| e.piece.is_live())
            .map(|e| Ranked {
                score: scorer.score(query, &e.piece.statement),
                piece: &e.piece,
            })
            .filter(|r| r.score > 0.0)
            .collect();
        ranked.sort_by(|a, b| b.cmp(a));
        ranked.truncate(k.max(1));
        ranked.into_iter().map(|r| (r.piece.clone(), r.score)).collect()
    }

    /// Merge duplicates, then supersede older sides of `X is Y` conflicts. Idempotent.
    pub fn consolidate(&mut self) -> Result<ConsolidationReport, MemoryError> {
        let mut report = ConsolidationReport::default();

        // duplicates among live pieces: keep the oldest
        let mut groups: Groups = BTreeMap::new();
        for p in self.live() {
            groups
                .entry((p.owner, p.category, normalize_statement(&p.statement)))
                .or_default()
                .push((p.created_at, p.id.clone()));
        }
        let mut redirect: HashMap<String, String> = HashMap::new();
        for (_, mut members) in groups {
            if members.len() < 2 {
                continue;
            }
            members.sort();
            let keep = members[0].1.clone();
            for (_, id) in members.into_iter().skip(1) {
                redirect.insert(id, keep.clone());
            }
        }
        for id in redirect.keys() {
            self.remove(id);
            report.merged += 1;
        }
        if !redirect.is_empty() {
            for entry in self.entries.values_mut() {
                if let Some(target) = &entry.piece.superseded_by {
                    if let Some(kept) = redirect.get(target) {
                        entry.piece.superseded_by = Some(kept.clone());
                    }
                }
            }
        }

        // conflicts: same owner/category/subject, different value; newest wins
        let mut subjects: Groups = BTreeMap::new();
        for p in self.live() {
            if !matches!(p.category, Category::Preference | Category::Fact) {
                continue;
            }
            if let Some((subject, _)) = conflict_split(&p.statement) {
                subjects
                    .entry((p.owner, p.category, subject))
                    .or_default()
                    .push((p.created_at, p.id.clone()));
            }
        }
        for (_, mut members) in subjects {
            if members.len() < 2 {
                continue;
            }
            members.sort();
            let newest = members.last().expect("non-empty").1.clone();
            for (_, id) in &members[..members.len() - 1] {
                let entry = self.entries.get_mut(id).expect("member exists");
                entry.piece.superseded_by = Some(newest.clone());
                report.conflicts_resolved += 1;
            }
        }

        if !report.is_noop() {
            self.persist()?;
        }
        Ok(report)
    }

    /// Rewrite the backing file from the in-memory state.
    pub fn persist(&self) -> Result<(), MemoryError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut body = String::new();
        let mut pieces: Vec<&MemoryPiece> = self.pieces().collect();
        pieces.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        for p in pieces {
            body.push_str(&serde_json::to_string(p).expect("piece serializes"));
            body.push('\n');
        }
        let tmp = path.with_extension("jsonl.tmp");
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Every supersession chain terminates.
    pub fn supersession_is_acyclic(&self) -> bool {
        for start in self.entries.keys() {
            let mut seen = HashSet::new();
            let mut cur = start.as_str();
            while let Some(next) = self.entries.get(cur).and_then(|e| e.piece.superseded_by.as_deref()) {
                if !seen.insert(cur) {
                    return false;
                }
                cur = next;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::SourceTurn;
    use chrono::{TimeZone, Utc};

    fn piece(id: &str, statement: &str, t: i64) -> MemoryPiece {
        MemoryPiece {
            id: id.into(),
            owner: Owner::User,
            category: Category::Preference,
            statement: statement.into(),
            source_turn: SourceTurn::Turn(0),
            created_at: Utc.timestamp_millis_opt(t).unwrap(),
            superseded_by: None,
        }
    }

    #[test]
    fn store_get_roundtrip_and_duplicate() {
        let mut s = MemoryStore::new();
        let p = piece("a", "user loves jazz", 1);
        assert_eq!(s.store(p.clone()).unwrap(), "a");
        assert_eq!(s.get("a"), Some(&p));
        assert_eq!(s.store(p), Err(MemoryError::DuplicateId("a".into())));
    }

    #[test]
    fn store_five_hundred() {
        let mut s = MemoryStore::new();
        for i in 0..500 {
            s.store(piece(&format!("p{i}"), &format!("fact number {i}"), i)).unwrap();
        }
        assert_eq!(s.len(), 500);
    }

    #[test]
    fn store_rejects_dangling_and_empty() {
        let mut s = MemoryStore::new();
        let mut p = piece("a", "x", 1);
        p.superseded_by = Some("ghost".into());
        assert!(matches!(s.store(p), Err(MemoryError::DanglingSupersession { .. })));
        assert!(matches!(s.store(piece("b", "  ", 1)), Err(MemoryError::EmptyStatement(_))));
    }

    #[test]
    fn retrieve_basic() {
        let mut s = MemoryStore::new();
        assert!(s.retrieve("jazz", 5).is_empty());
        s.store(piece("a", "user loves jazz", 1)).unwrap();
        s.store(piece("b", "user has a dog", 2)).unwrap();
        s.store(piece("c", "agent grew up in lisbon", 3)).unwrap();
        let hits = s.retrieve("jazz music", 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0.id, "a");
        assert_eq!(hits[0].1, 0.25);
    }

    #[test]
    fn retrieve_tie_prefers_newer() {
        let mut s = MemoryStore::new();
        s.store(piece("old", "likes tea", 1)).unwrap();
        s.store(piece("new", "likes coffee", 2)).unwrap();
        let hits = s.retrieve("likes", 1);
        assert_eq!(hits[0].0.id, "new");
    }

    #[test]
    fn consolidate_merges_identical() {
        let mut s = MemoryStore::new();
        s.store(piece("a", "user loves jazz", 1)).unwrap();
        s.store(piece("b", "User loves jazz.", 2)).unwrap();
        let r = s.consolidate().unwrap();
        assert_eq!(r, ConsolidationReport { merged: 1, conflicts_resolved: 0 });
        assert_eq!(s.len(), 1);
        assert!(s.get("a").is_some());
        assert!(s.consolidate().unwrap().is_noop());
    }

    #[test]
    fn consolidate_supersedes_older_conflict() {
        // oracle: the pair shares subject "user's favorite color is"; newer value wins
        let older = "user's favorite color is red";
        let newer = "user's favorite color is blue";
        let (s1, v1) = conflict_split(older).unwrap();
        let (s2, v2) = conflict_split(newer).unwrap();
        assert_eq!(s1, s2);
        assert_ne!(v1, v2);

        let mut s = MemoryStore::new();
        s.store(piece("t1", older, 1)).unwrap();
        s.store(piece("t2", newer, 2)).unwrap();
        let r = s.consolidate().unwrap();
        assert_eq!(r.conflicts_resolved, 1);
        assert_eq!(s.get("t1").unwrap().superseded_by.as_deref(), Some("t2"));
        assert!(s.get("t2").unwrap().is_live());
        assert!(s.consolidate().unwrap().is_noop());
        assert!(s.supersession_is_acyclic());
        assert_eq!(s.retrieve("favorite color", 5).len(), 1);
    }

    #[test]
    fn events_do_not_conflict() {
        let mut s = MemoryStore::new();
        let mut a = piece("a", "the trip was fun", 1);
        a.category = Category::Event;
        let mut b = piece("b", "the trip was long", 2);
        b.category = Category::Event;
        s.store(a).unwrap();
        s.store(b).unwrap();
        assert!(s.consolidate().unwrap().is_noop());
    }

    #[test]
    fn merge_redirects_supersession() {
        let mut s = MemoryStore::new();
        s.store(piece("a", "user's city is paris", 1)).unwrap();
        s.store(piece("b", "user's city is rome", 2)).unwrap();
        s.consolidate().unwrap();
        s.store(piece("c", "user's city is rome", 3)).unwrap();
        let r = s.consolidate().unwrap();
        assert_eq!(r.merged, 1);
        assert_eq!(s.get("a").unwrap().superseded_by.as_deref(), Some("b"));
        assert!(s.get("c").is_none());
    }

    #[test]
    fn file_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memory").join("s1.jsonl");
        {
            let mut s = MemoryStore::open(&path).unwrap();
            s.store(piece("a", "user's color is red", 1)).unwrap();
            s.store(piece("b", "user's color is blue", 2)).unwrap();
            s.consolidate().unwrap();
        }
        let s = MemoryStore::open(&path).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get("a").unwrap().superseded_by.as_deref(), Some("b"));
    }
}
