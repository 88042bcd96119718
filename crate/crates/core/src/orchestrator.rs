//! The turn pipeline.
//!
//! Phase A runs other-awareness, memory retrieval, the knowledge pipeline and the quick
//! response concurrently. Phase B loops analytical messages under the requirement
//! coverage check. Phase C re-thinks the self state and extracts memory. A session runs
//! one turn at a time; later inputs wait on the session lock in arrival order.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc::UnboundedSender;
use tokio::sync::oneshot;

use crate::awareness::{assess_other, rethink_self, OtherState, Plan, SelfState};
use crate::clock::Clock;
use crate::conversation::{
    ConversationError, DialogHistory, Message, MessageKind, Persona, Session, SessionStatus, TranscriptError,
};
use crate::llm::{Llm, Outcome};
use crate::memory::{
    extract_pieces, fetch_knowledge, rewrite_query, seed_pieces, summarize_knowledge, ConsolidationReport,
    KnowledgeBrief, KnowledgeSource, MemoryError, MemoryPiece, MemoryStore,
};
use crate::persist::{DataDir, JsonlAppender};
use crate::responders::{
    analytic_step, assess_coverage, build_requirements, fallback_ack, quick_respond, should_continue, AnalyticContext,
    LoopConfig, LoopDecision, MessageSlot,
};
use crate::trace::{parse_trace_jsonl, TraceEvent, TraceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Every session uses `loop.rng_seed` as is.
    #[default]
    Fixed,
    /// The seed is mixed with the session id.
    PerSession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub window_size: usize,
    pub always_quick: bool,
    /// Two awareness calls (conversational, social) instead of one combined call.
    pub split_perspectives: bool,
    /// Run Phase A branches one after another. Baseline for latency comparisons.
    pub serial_phase_a: bool,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub seed_mode: SeedMode,
    pub memory_k_responders: usize,
    pub memory_k_awareness: usize,
    pub consolidation_every: u64,
    pub max_snippets: usize,
    /// Inputs allowed to wait behind the in-flight turn.
    pub max_backlog: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            window_size: 20,
            always_quick: true,
            split_perspectives: false,
            serial_phase_a: false,
            loop_cfg: LoopConfig::default(),
            seed_mode: SeedMode::Fixed,
            memory_k_responders: 5,
            memory_k_awareness: 3,
            consolidation_every: 10,
            max_snippets: crate::memory::knowledge::DEFAULT_MAX_SNIPPETS,
            max_backlog: 8,
        }
    }
}

impl EngineConfig {
    pub fn from_file(path: &std::path::Path) -> std::io::Result<Self> {
        let body = std::fs::read_to_string(path)?;
        serde_json::from_str(&body).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TurnError {
    #[error("session {0} is concluded")]
    SessionClosed(String),
    #[error("turn {} failed: awareness and quick response both unavailable", .0.turn_index)]
    TurnFailed(Box<TurnResult>),
    #[error(transparent)]
    Conversation(#[from] ConversationError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("storage: {0}")]
    Io(String),
}

impl From<std::io::Error> for TurnError {
    fn from(e: std::io::Error) -> Self {
        TurnError::Io(e.to_string())
    }
}

/// Items streamed while a turn runs, in emission order.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    Message(Message),
    Trace(TraceEvent),
}

pub type Sink = UnboundedSender<StreamItem>;

#[derive(Debug, Clone, PartialEq)]
pub struct TurnResult {
    pub turn_index: u64,
    /// Agent messages in emission order.
    pub messages: Vec<Message>,
    pub events: Vec<TraceEvent>,
    /// The session concluded at the end of this turn.
    pub concluded: bool,
}

impl TurnResult {
    pub fn analytical_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == TraceKind::AnalyticalEmitted).count()
    }

    pub fn event(&self, kind: TraceKind) -> Option<&TraceEvent> {
        self.events.iter().find(|e| e.kind == kind)
    }
}

/// Lightweight view of a session, readable without waiting for a running turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub persona_id: String,
    pub status: SessionStatus,
    pub turns: u64,
    #[serde(with = "crate::conversation::timestamp")]
    pub created_at: DateTime<Utc>,
}

#[derive(Debug)]
struct Files {
    transcript: JsonlAppender,
    trace: JsonlAppender,
}

struct SessionState {
    session: Session,
    persona: Persona,
    history: DialogHistory,
    memory: MemoryStore,
    next_seq: u64,
    next_turn: u64,
    files: Option<Files>,
}

pub struct SessionHandle {
    id: String,
    state: tokio::sync::Mutex<SessionState>,
    summary: Mutex<SessionSummary>,
    pending: AtomicUsize,
    /// Completion signal of the most recently issued ticket.
    tail: Mutex<Option<oneshot::Receiver<()>>>,
}

/// Holds a place in a session's queue until dropped. Tickets are served in issue order.
pub struct QueueTicket {
    handle: Arc<SessionHandle>,
    prev: Option<oneshot::Receiver<()>>,
    done: Option<oneshot::Sender<()>>,
}

impl QueueTicket {
    /// Wait until every earlier ticket on the session has been released.
    pub async fn wait_turn(&mut self) {
        if let Some(prev) = self.prev.take() {
            let _ = prev.await;
        }
    }
}

impl Drop for QueueTicket {
    fn drop(&mut self) {
        self.handle.pending.fetch_sub(1, Ordering::SeqCst);
        // An unserved ticket passes its place on only once its predecessor is done.
        if let (Some(prev), Some(done)) = (self.prev.take(), self.done.take()) {
            if let Ok(rt) = tokio::runtime::Handle::try_current() {
                rt.spawn(async move {
                    let _ = prev.await;
                    drop(done);
                });
            }
        }
    }
}

impl SessionHandle {
    fn new(state: SessionState) -> Arc<Self> {
        let summary = SessionSummary {
            id: state.session.id.clone(),
            persona_id: state.session.persona_id.clone(),
            status: state.session.status,
            turns: state.next_turn,
            created_at: state.session.created_at,
        };
        Arc::new(Self {
            id: state.session.id.clone(),
            state: tokio::sync::Mutex::new(state),
            summary: Mutex::new(summary),
            pending: AtomicUsize::new(0),
            tail: Mutex::new(None),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn summary(&self) -> SessionSummary {
        self.summary.lock().unwrap().clone()
    }

    /// Turns running or waiting on this session.
    pub fn pending(&self) -> usize {
        self.pending.load(Ordering::SeqCst)
    }

    /// Reserve a queue slot, or `None` when `max_backlog` inputs already wait
    /// behind the in-flight one.
    pub fn try_enqueue(self: &Arc<Self>, max_backlog: usize) -> Option<QueueTicket> {
        let mut tail = self.tail.lock().unwrap();
        if self.pending.load(Ordering::SeqCst) > max_backlog {
            return None;
        }
        self.pending.fetch_add(1, Ordering::SeqCst);
        let (done, rx) = oneshot::channel();
        Some(QueueTicket {
            handle: self.clone(),
            prev: tail.replace(rx),
            done: Some(done),
        })
    }

    /// Current session record. Waits for an in-flight turn.
    pub async fn session(&self) -> Session {
        self.state.lock().await.session.clone()
    }

    pub async fn history(&self) -> DialogHistory {
        self.state.lock().await.history.clone()
    }

    pub async fn memory(&self) -> MemoryStore {
        self.state.lock().await.memory.clone()
    }
}

struct LogInner {
    history: DialogHistory,
    files: Option<Files>,
    next_seq: u64,
    next_msg: u32,
    events: Vec<TraceEvent>,
    messages: Vec<Message>,
    io_error: Option<String>,
}

/// Per-turn recorder: appends messages and events to memory, disk and the sink.
struct TurnLog<'a> {
    session_id: String,
    turn: u64,
    t0: u64,
    clock: &'a dyn Clock,
    sink: Option<&'a Sink>,
    inner: Mutex<LogInner>,
}

impl TurnLog<'_> {
    fn wall_ms(&self) -> u64 {
        self.clock.monotonic_ms().saturating_sub(self.t0)
    }

    fn event(&self, kind: TraceKind, payload: Value) {
        let mut inner = self.inner.lock().unwrap();
        let wall_ms = self.wall_ms().max(inner.events.last().map_or(0, |e| e.wall_ms));
        let event = TraceEvent {
            seq: inner.next_seq,
            turn_index: self.turn,
            kind,
            wall_ms,
            payload,
        };
        inner.next_seq += 1;
        if let Some(files) = inner.files.as_mut() {
            if let Err(e) = files.trace.append(&event.to_json_line()) {
                inner.io_error.get_or_insert(e.to_string());
            }
        }
        if let Some(sink) = self.sink {
            let _ = sink.send(StreamItem::Trace(event.clone()));
        }
        inner.events.push(event);
    }

    fn degraded(&self, module: &str, reason: &str) {
        tracing::warn!(session = %self.session_id, turn = self.turn, module, reason, "degraded");
        self.event(TraceKind::Degraded, json!({"module": module, "reason": reason}));
    }

    fn note<T>(&self, module: &str, outcome: &Outcome<T>) {
        if let Some(reason) = &outcome.degraded {
            self.degraded(module, reason);
        }
    }

    fn next_id(&self) -> String {
        let mut inner = self.inner.lock().unwrap();
        let n = inner.next_msg;
        inner.next_msg += 1;
        format!("{}-{:05}-{:02}", self.session_id, self.turn, n)
    }

    fn slot(&self) -> MessageSlot {
        MessageSlot {
            session_id: self.session_id.clone(),
            turn_index: self.turn,
            id: self.next_id(),
            at: self.clock.now(),
        }
    }

    fn message(&self, msg: Message) -> Result<(), ConversationError> {
        let mut inner = self.inner.lock().unwrap();
        inner.history.append(msg.clone())?;
        if let Some(files) = inner.files.as_mut() {
            if let Err(e) = files.transcript.append(&msg.to_json_line()) {
                inner.io_error.get_or_insert(e.to_string());
            }
        }
        if msg.is_user() {
            return Ok(());
        }
        if let Some(sink) = self.sink {
            let _ = sink.send(StreamItem::Message(msg.clone()));
        }
        inner.messages.push(msg);
        Ok(())
    }

    fn window(&self, n: usize) -> Vec<Message> {
        self.inner.lock().unwrap().history.window(n)
    }
}

fn hits_json(hits: &[(MemoryPiece, f64)]) -> Value {
    Value::Array(
        hits.iter()
            .map(|(p, s)| json!({"id": p.id, "statement": p.statement, "score": s}))
            .collect(),
    )
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub struct Engine {
    llm: Llm,
    config: EngineConfig,
    clock: Arc<dyn Clock>,
    sources: Vec<Arc<dyn KnowledgeSource>>,
    data: Option<DataDir>,
}

impl Engine {
    pub fn new(llm: Llm, config: EngineConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            llm,
            config,
            clock,
            sources: Vec::new(),
            data: None,
        }
    }

    pub fn with_sources(mut self, sources: Vec<Arc<dyn KnowledgeSource>>) -> Self {
        self.sources = sources;
        self
    }

    /// Persist transcripts, traces, memory and session records under `dir`.
    pub fn with_data_dir(mut self, dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let data = DataDir::new(dir);
        data.ensure()?;
        self.data = Some(data);
        Ok(self)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn data_dir(&self) -> Option<&DataDir> {
        self.data.as_ref()
    }

    pub fn llm(&self) -> &Llm {
        &self.llm
    }

    fn turn_seed(&self, session_id: &str, turn: u64) -> u64 {
        let base = match self.config.seed_mode {
            SeedMode::Fixed => self.config.loop_cfg.rng_seed,
            SeedMode::PerSession => self.config.loop_cfg.rng_seed ^ fnv1a(session_id),
        };
        base.wrapping_add(turn.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    fn open_files(&self, id: &str) -> std::io::Result<Option<Files>> {
        self.data
            .as_ref()
            .map(|d| {
                Ok(Files {
                    transcript: JsonlAppender::open(&d.transcript_file(id))?,
                    trace: JsonlAppender::open(&d.trace_file(id))?,
                })
            })
            .transpose()
    }

    /// Start a session. Persona memories are seeded into the store.
    pub fn create_session(&self, id: &str, persona: Persona) -> Result<Arc<SessionHandle>, TurnError> {
        let now = self.clock.now();
        let session = Session::new(id, &persona, now);
        let mut memory = match &self.data {
            Some(d) => {
                let path = d.memory_file(id);
                if path.exists() {
                    std::fs::remove_file(&path)?;
                }
                MemoryStore::open(path)?
            }
            None => MemoryStore::new(),
        };
        for piece in seed_pieces(&persona, now) {
            memory.store(piece)?;
        }
        if let Some(d) = &self.data {
            for path in [d.transcript_file(id), d.trace_file(id)] {
                if path.exists() {
                    std::fs::remove_file(path)?;
                }
            }
            d.write_session(&session)?;
        }
        let state = SessionState {
            history: DialogHistory::new(id),
            files: self.open_files(id)?,
            session,
            persona,
            memory,
            next_seq: 0,
            next_turn: 0,
        };
        Ok(SessionHandle::new(state))
    }

    /// Reload a persisted session after a restart.
    pub fn open_session(&self, id: &str, persona: Persona) -> Result<Arc<SessionHandle>, TurnError> {
        let data = self.data.as_ref().ok_or_else(|| TurnError::Io("no data directory".into()))?;
        let session = data.read_session(id)?;
        let history = DialogHistory::from_jsonl(id, &DataDir::read_or_empty(&data.transcript_file(id))?)?;
        let events = parse_trace_jsonl(&DataDir::read_or_empty(&data.trace_file(id))?)
            .map_err(|e| TurnError::Io(format!("trace of {id}: {e}")))?;
        let memory = MemoryStore::open(data.memory_file(id))?;
        let next_turn = history
            .last()
            .map(|m| m.turn_index + 1)
            .max(events.iter().filter(|e| e.kind == TraceKind::TurnStarted).map(|e| e.turn_index + 1).max())
            .unwrap_or(0);
        let state = SessionState {
            next_seq: events.len() as u64,
            next_turn,
            files: self.open_files(id)?,
            session,
            persona,
            history,
            memory,
        };
        Ok(SessionHandle::new(state))
    }

    /// Run one turn for a queued input, after every input queued before it.
    pub async fn run_queued(
        &self,
        handle: &SessionHandle,
        mut ticket: QueueTicket,
        user_input: &str,
        sink: Option<&Sink>,
    ) -> Result<TurnResult, TurnError> {
        ticket.wait_turn().await;
        let out = self.run_turn(handle, user_input, sink).await;
        drop(ticket);
        out
    }

    /// Run one turn. Waits for any turn already running on this session.
    pub async fn run_turn(
        &self,
        handle: &SessionHandle,
        user_input: &str,
        sink: Option<&Sink>,
    ) -> Result<TurnResult, TurnError> {
        let mut guard = handle.state.lock().await;
        let SessionState {
            session,
            persona,
            history,
            memory,
            next_seq,
            next_turn,
            files,
        } = &mut *guard;
        if !session.is_active() {
            return Err(TurnError::SessionClosed(session.id.clone()));
        }
        let turn = *next_turn;
        let mut rng = ChaCha8Rng::seed_from_u64(self.turn_seed(&session.id, turn));
        let log = TurnLog {
            session_id: session.id.clone(),
            turn,
            t0: self.clock.monotonic_ms(),
            clock: self.clock.as_ref(),
            sink,
            inner: Mutex::new(LogInner {
                history: std::mem::take(history),
                files: files.take(),
                next_seq: *next_seq,
                next_msg: 0,
                events: Vec::new(),
                messages: Vec::new(),
                io_error: None,
            }),
        };

        log.event(TraceKind::TurnStarted, json!({"user_input": user_input}));
        let user_msg = Message::user(&session.id, turn, log.next_id(), user_input, self.clock.now());
        let appended = log.message(user_msg.clone());
        let result = match appended {
            Ok(()) => self.turn_phases(&log, session, persona, memory, &user_msg, &mut rng).await,
            Err(e) => Err(TurnError::Conversation(e)),
        };

        let inner = log.inner.into_inner().unwrap();
        *history = inner.history;
        *files = inner.files;
        *next_seq = inner.next_seq;
        *next_turn = turn + 1;
        let mut io_error = inner.io_error;
        if let Some(f) = files.as_mut() {
            if let Err(e) = f.transcript.sync().and_then(|_| f.trace.sync()) {
                io_error.get_or_insert(e.to_string());
            }
        }
        if let Some(d) = &self.data {
            if let Err(e) = d.write_session(session) {
                io_error.get_or_insert(e.to_string());
            }
        }
        *handle.summary.lock().unwrap() = SessionSummary {
            id: session.id.clone(),
            persona_id: session.persona_id.clone(),
            status: session.status,
            turns: *next_turn,
            created_at: session.created_at,
        };
        let (failed, concluded) = result?;
        if let Some(e) = io_error {
            return Err(TurnError::Io(e));
        }
        let out = TurnResult {
            turn_index: turn,
            messages: inner.messages,
            events: inner.events,
            concluded,
        };
        if failed {
            Err(TurnError::TurnFailed(Box::new(out)))
        } else {
            Ok(out)
        }
    }

    /// Phases A to C. Returns (failed, concluded).
    async fn turn_phases(
        &self,
        log: &TurnLog<'_>,
        session: &mut Session,
        persona: &Persona,
        memory: &mut MemoryStore,
        user_msg: &Message,
        rng: &mut ChaCha8Rng,
    ) -> Result<(bool, bool), TurnError> {
        let cfg = &self.config;
        let turn = user_msg.turn_index;
        let user_input = user_msg.text.as_str();
        let window = log.window(cfg.window_size);

        // Phase A
        let (quick, other, hits, brief) = {
            let store: &MemoryStore = memory;
            let self_state: &SelfState = &session.self_state;
            let prior_other: &OtherState = &session.other_state;
            let window = &window;
            let quick_fut = async {
                if !cfg.always_quick {
                    return None;
                }
                let out = quick_respond(&self.llm, persona, window, self_state, || log.slot()).await;
                let msg = out.value.clone();
                let appended = log.message(msg.clone());
                log.event(
                    TraceKind::QuickEmitted,
                    json!({
                        "message_id": msg.id,
                        "text": msg.text,
                        "request_blocks": out.request_blocks,
                        "degraded": out.degraded,
                    }),
                );
                log.note("quick_response", &out);
                Some(appended.map(|_| out))
            };
            let other_fut = async {
                let recalled = store.retrieve(user_input, cfg.memory_k_awareness);
                let out =
                    assess_other(&self.llm, persona, window, prior_other, &recalled, turn, cfg.split_perspectives)
                        .await;
                log.event(
                    TraceKind::OtherState,
                    json!({
                        "state": out.value,
                        "request_blocks": out.request_blocks,
                        "degraded": out.degraded,
                    }),
                );
                log.note("other_awareness", &out);
                out
            };
            let memory_fut = async {
                let hits = store.retrieve(user_input, cfg.memory_k_responders);
                log.event(TraceKind::MemoryRetrieved, json!({"query": user_input, "hits": hits_json(&hits)}));
                hits
            };
            let knowledge_fut = async {
                let rewrite = if self.sources.is_empty() {
                    Outcome::default_with(vec![user_input.to_string()])
                } else {
                    rewrite_query(&self.llm, &persona.name, user_input, window).await
                };
                let fetched = fetch_knowledge(&rewrite.value, &self.sources, cfg.max_snippets).await;
                let mut summary = summarize_knowledge(&self.llm, &persona.name, fetched.snippets, Some(user_input)).await;
                summary.value.queries_used = rewrite.value.clone();
                let mut blocks = rewrite.request_blocks.clone();
                blocks.extend(summary.request_blocks.iter().cloned());
                log.event(
                    TraceKind::KnowledgeBrief,
                    json!({
                        "queries": summary.value.queries_used,
                        "snippets": summary.value.snippets.iter().map(|s| &s.source_id).collect::<Vec<_>>(),
                        "summary": summary.value.summary,
                        "failed_sources": fetched.failures.iter().map(|f| &f.source_id).collect::<Vec<_>>(),
                        "request_blocks": blocks,
                    }),
                );
                log.note("query_rewrite", &rewrite);
                log.note("knowledge_summarize", &summary);
                for f in &fetched.failures {
                    log.degraded("knowledge_source", &format!("{}: {}", f.source_id, f.message));
                }
                summary.value
            };
            if cfg.serial_phase_a {
                let q = quick_fut.await;
                let o = other_fut.await;
                let m = memory_fut.await;
                let k = knowledge_fut.await;
                (q, o, m, k)
            } else {
                futures::join!(quick_fut, other_fut, memory_fut, knowledge_fut)
            }
        };
        let quick = quick.transpose()?;
        let other: Outcome<OtherState> = other;
        let brief: KnowledgeBrief = brief;
        let failed = other.is_degraded() && quick.as_ref().is_some_and(Outcome::is_degraded);

        // Phase B
        let mut reqs = build_requirements(&other.value, &session.self_state, user_msg);
        let mut turn_msgs = vec![user_msg.clone()];
        let mut gate = Value::Null;
        let mut proceed = !failed;
        if failed {
            log.degraded("turn", "other awareness and quick response both failed");
        } else if let Some(q) = &quick {
            turn_msgs.push(q.value.clone());
            let cov = assess_coverage(&self.llm, &persona.name, &mut reqs, &turn_msgs).await;
            log.note("rethink", &cov);
            let draw: f64 = rng.random();
            let decision = should_continue(&cov.value, 0, &cfg.loop_cfg, draw);
            gate = json!({
                "verdict": cov.value,
                "draw": draw,
                "decision": decision,
                "request_blocks": cov.request_blocks,
            });
            proceed = decision == LoopDecision::Continue;
        }
        let mut emitted = 0u32;
        while proceed {
            let ctx = AnalyticContext {
                persona,
                window: &window,
                other: &other.value,
                brief: &brief,
                memory_hits: &hits,
                turn_messages: &turn_msgs,
                requirements: &reqs,
            };
            let step = analytic_step(&self.llm, &ctx, || log.slot()).await;
            let (msg, labels) = match step {
                Ok(x) => x,
                Err(e) => {
                    log.degraded("analytic_response", &e.to_string());
                    break;
                }
            };
            log.message(msg.clone())?;
            emitted += 1;
            log.event(
                TraceKind::AnalyticalEmitted,
                json!({"message_id": msg.id, "text": msg.text, "request_blocks": labels}),
            );
            turn_msgs.push(msg);
            let cov = assess_coverage(&self.llm, &persona.name, &mut reqs, &turn_msgs).await;
            if !reqs.is_empty() {
                log.event(
                    TraceKind::RethinkVerdict,
                    json!({"verdict": cov.value, "request_blocks": cov.request_blocks}),
                );
            }
            log.note("rethink", &cov);
            let draw: f64 = rng.random();
            let decision = should_continue(&cov.value, emitted, &cfg.loop_cfg, draw);
            log.event(
                TraceKind::LoopDecision,
                json!({
                    "decision": decision,
                    "draw": draw,
                    "emitted": emitted,
                    "all_covered": cov.value.all_covered,
                }),
            );
            proceed = decision == LoopDecision::Continue;
        }
        if emitted == 0 && quick.is_none() {
            // Without a quick slot the turn would otherwise close with no reply at all.
            let slot = log.slot();
            let msg = Message::agent(
                &slot.session_id,
                slot.turn_index,
                slot.id,
                MessageKind::Analytical,
                fallback_ack(persona, turn),
                slot.at,
            );
            log.message(msg.clone())?;
            emitted += 1;
            log.event(
                TraceKind::AnalyticalEmitted,
                json!({"message_id": msg.id, "text": msg.text, "fallback": true, "request_blocks": []}),
            );
            log.event(
                TraceKind::LoopDecision,
                json!({
                    "decision": LoopDecision::Conclude,
                    "draw": null,
                    "emitted": emitted,
                    "all_covered": reqs.all_covered(),
                }),
            );
        }
        log.event(
            TraceKind::TurnConcluded,
            json!({
                "analytical_count": emitted,
                "gate": gate,
                "requirements": reqs,
                "failed": failed,
            }),
        );

        // Phase C
        let after = log.window(cfg.window_size);
        let rethink = rethink_self(&self.llm, persona, &after, &session.self_state, turn, cfg.split_perspectives).await;
        log.event(
            TraceKind::SelfStateUpdated,
            json!({
                "state": rethink.value,
                "request_blocks": rethink.request_blocks,
                "degraded": rethink.degraded,
            }),
        );
        log.note("self_awareness", &rethink);
        session.self_state = rethink.value;
        session.other_state = other.value;

        let this_turn: Vec<Message> = log.inner.lock().unwrap().history.turn(turn);
        let mut stored = Vec::new();
        let mut extract_error = None;
        match extract_pieces(&self.llm, &this_turn, persona, turn, self.clock.now()).await {
            Ok(pieces) => {
                for piece in pieces {
                    match memory.store(piece) {
                        Ok(id) => stored.push(id),
                        Err(MemoryError::EmptyStatement(_)) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            Err(e) => extract_error = Some(e.to_string()),
        }
        let concluded = session.self_state.plan == Plan::Conclude;
        let due = cfg.consolidation_every > 0 && (turn + 1).is_multiple_of(cfg.consolidation_every);
        let consolidation = if due || concluded { Some(memory.consolidate()?) } else { None };
        if concluded {
            session.status = SessionStatus::Concluded;
        }
        log.event(
            TraceKind::MemoryExtracted,
            json!({
                "stored": stored,
                "consolidation": consolidation,
                "session_concluded": concluded,
            }),
        );
        if let Some(e) = extract_error {
            log.degraded("memory_extract", &e);
        }
        Ok((failed, concluded))
    }

    /// Conclude a session: final consolidation, status change, one trace record.
    /// Waits for any in-flight turn first.
    pub async fn conclude_session(&self, handle: &SessionHandle) -> Result<ConsolidationReport, TurnError> {
        let mut guard = handle.state.lock().await;
        let st = &mut *guard;
        if !st.session.is_active() {
            return Err(TurnError::SessionClosed(st.session.id.clone()));
        }
        let report = st.memory.consolidate()?;
        st.session.status = SessionStatus::Concluded;
        let event = TraceEvent {
            seq: st.next_seq,
            turn_index: st.next_turn,
            kind: TraceKind::SessionConcluded,
            wall_ms: 0,
            payload: json!({"consolidation": report}),
        };
        st.next_seq += 1;
        if let Some(f) = st.files.as_mut() {
            f.trace.append(&event.to_json_line())?;
            f.trace.sync()?;
        }
        if let Some(d) = &self.data {
            d.write_session(&st.session)?;
        }
        handle.summary.lock().unwrap().status = SessionStatus::Concluded;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_reads_nested_loop_keys() {
        let cfg: EngineConfig =
            serde_json::from_str(r#"{"loop": {"continuation_probability": 0.25, "max_analytical_messages": 2, "rng_seed": 7}}"#)
                .unwrap();
        assert_eq!(cfg.loop_cfg.continuation_probability, 0.25);
        assert_eq!(cfg.loop_cfg.max_analytical_messages, 2);
        assert_eq!(cfg.window_size, 20);
        assert!(cfg.always_quick);
    }

    #[test]
    fn turn_seeds_differ_by_turn_and_mode() {
        let llm = Llm::new(
            Arc::new(crate::provider::ScriptedProvider::new([]).unwrap()),
            crate::templates::Templates::builtin(),
        );
        let fixed = Engine::new(llm.clone(), EngineConfig::default(), Arc::new(crate::clock::SimClock::fixed()));
        assert_ne!(fixed.turn_seed("a", 0), fixed.turn_seed("a", 1));
        assert_eq!(fixed.turn_seed("a", 3), fixed.turn_seed("b", 3));
        let cfg = EngineConfig {
            seed_mode: SeedMode::PerSession,
            ..Default::default()
        };
        let per = Engine::new(llm, cfg, Arc::new(crate::clock::SimClock::fixed()));
        assert_ne!(per.turn_seed("a", 3), per.turn_seed("b", 3));
    }
}
