//! On-disk layout of a data directory.
//!
//! ```text
//! <data>/sessions/<id>.json      session record (status, current states, persona id)
//! <data>/transcripts/<id>.jsonl  one Message per line
//! <data>/traces/<id>.jsonl       one TraceEvent per line
//! <data>/memory/<id>.jsonl       one MemoryPiece per line
//! ```

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::conversation::Session;

#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_file(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.json"))
    }

    pub fn transcript_file(&self, id: &str) -> PathBuf {
        self.root.join("transcripts").join(format!("{id}.jsonl"))
    }

    pub fn trace_file(&self, id: &str) -> PathBuf {
        self.root.join("traces").join(format!("{id}.jsonl"))
    }

    pub fn memory_file(&self, id: &str) -> PathBuf {
        self.root.join("memory").join(format!("{id}.jsonl"))
    }

    pub fn ensure(&self) -> std::io::Result<()> {
        for sub in ["sessions", "transcripts", "traces", "memory"] {
            std::fs::create_dir_all(self.root.join(sub))?;
        }
        Ok(())
    }

    /// Ids of every persisted session, sorted.
    pub fn session_ids(&self) -> std::io::Result<Vec<String>> {
        let dir = self.root.join("sessions");
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = std::fs::read_dir(dir)?
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_suffix(".json").map(str::to_string)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn write_session(&self, session: &Session) -> std::io::Result<()> {
        let path = self.session_file(&session.id);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(session).expect("session serializes"))?;
        std::fs::rename(tmp, path)
    }

    pub fn read_session(&self, id: &str) -> std::io::Result<Session> {
        let body = std::fs::read(self.session_file(id))?;
        serde_json::from_slice(&body).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn read_or_empty(path: &Path) -> std::io::Result<String> {
        match std::fs::read_to_string(path) {
            Ok(s) => Ok(s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
            Err(e) => Err(e),
        }
    }
}

/// Append-only JSON-lines file.
#[derive(Debug)]
pub struct JsonlAppender {
    file: File,
}

impl JsonlAppender {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn append(&mut self, line: &str) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.file.write_all(&buf)
    }

    pub fn sync(&mut self) -> std::io::Result<()> {
        self.file.sync_data()
    }
}
