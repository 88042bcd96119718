use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use anthro_core::awareness::Emotion;
use anthro_core::clock::SimClock;
use anthro_core::conversation::{check_turn_grammar, MessageKind, SessionStatus};
use anthro_core::fixtures::{demo_entries, demo_persona};
use anthro_core::llm::Llm;
use anthro_core::memory::{KnowledgeSource, OfflineCorpus};
use anthro_core::orchestrator::{Engine, EngineConfig, StreamItem, TurnError};
use anthro_core::provider::labels::*;
use anthro_core::provider::{
    GenerationRequest, GenerationResult, Matcher, ModuleTag, ProviderError, RecordingProvider, ScriptEntry,
    ScriptFailure, ScriptedProvider, TextGenerator,
};
use anthro_core::responders::RequirementSource;
use anthro_core::templates::Templates;
use anthro_core::trace::{check_trace, parse_trace_jsonl, TraceKind};

fn recording(entries: Vec<ScriptEntry>) -> Arc<RecordingProvider<ScriptedProvider>> {
    Arc::new(RecordingProvider::new(ScriptedProvider::new(entries).unwrap()))
}

fn engine_with(provider: Arc<RecordingProvider<ScriptedProvider>>, cfg: EngineConfig) -> Engine {
    Engine::new(Llm::new(provider, Templates::builtin()), cfg, Arc::new(SimClock::fixed()))
}

fn corpus() -> Arc<dyn KnowledgeSource> {
    Arc::new(OfflineCorpus::from_documents(
        "offline",
        [(
            "porto.txt".to_string(),
            "Porto is a compact city on the Douro river.\n\nTravel tips: a weekend trip to Porto needs two days.".to_string(),
        )],
    ))
}

/// Coverage verdicts are "nothing covered" for the first call and "all covered" after.
struct FirstUncovered {
    inner: ScriptedProvider,
    rethinks: AtomicUsize,
}

#[async_trait::async_trait]
impl TextGenerator for FirstUncovered {
    fn id(&self) -> &str {
        "first-uncovered"
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        let mut out = self.inner.generate(req).await?;
        if req.module_tag == ModuleTag::Rethink && self.rethinks.fetch_add(1, Ordering::SeqCst) == 0 {
            out.text = r#"{"coverage":{"q1":false,"q2":false,"q3":false}}"#.into();
        }
        Ok(out)
    }
}

#[tokio::test]
async fn golden_single_turn_trace() {
    let provider = Arc::new(RecordingProvider::new(FirstUncovered {
        inner: ScriptedProvider::new(demo_entries()).unwrap(),
        rethinks: AtomicUsize::new(0),
    }));
    let engine = Engine::new(Llm::new(provider.clone(), Templates::builtin()), EngineConfig::default(), Arc::new(SimClock::fixed()))
        .with_sources(vec![corpus()]);
    let handle = engine.create_session("s1", demo_persona()).unwrap();
    let out = engine.run_turn(&handle, "I want to plan a weekend trip. Any ideas?", None).await.unwrap();

    let kinds: Vec<TraceKind> = out.events.iter().map(|e| e.kind).collect();
    assert_eq!(
        kinds,
        vec![
            TraceKind::TurnStarted,
            TraceKind::QuickEmitted,
            TraceKind::OtherState,
            TraceKind::MemoryRetrieved,
            TraceKind::KnowledgeBrief,
            TraceKind::AnalyticalEmitted,
            TraceKind::RethinkVerdict,
            TraceKind::LoopDecision,
            TraceKind::TurnConcluded,
            TraceKind::SelfStateUpdated,
            TraceKind::MemoryExtracted,
        ]
    );
    assert_eq!(check_trace(&out.events, true).unwrap(), 1);
    assert_eq!(out.messages[0].kind, MessageKind::Quick);
    assert_eq!(out.messages[1].kind, MessageKind::Analytical);
    assert_eq!(out.messages[0].id, "s1-00000-01");

    // Question plus task step plus proactivity, in that order.
    let concluded = out.event(TraceKind::TurnConcluded).unwrap();
    let sources: Vec<RequirementSource> =
        serde_json::from_value(concluded.payload["requirements"]["items"].as_array().unwrap().iter().map(|i| i["source"].clone()).collect()).unwrap();
    assert_eq!(
        sources,
        vec![
            RequirementSource::UserQuestion,
            RequirementSource::TaskStrategyNext,
            RequirementSource::ProactivitySuggestion
        ]
    );
    let brief = out.event(TraceKind::KnowledgeBrief).unwrap();
    assert!(brief.payload["snippets"].as_array().unwrap().iter().any(|s| s.as_str().unwrap().starts_with("offline:porto.txt#")));

    let history = handle.history().await;
    check_turn_grammar(history.messages(), true).unwrap();
    assert_eq!(provider.count(ModuleTag::QuickResponse), 1);
    assert_eq!(provider.count(ModuleTag::QueryRewrite), 1);
    assert_eq!(provider.count(ModuleTag::KnowledgeSummarize), 1);
}

#[tokio::test]
async fn no_sources_skips_rewrite_and_summary() {
    let provider = recording(demo_entries());
    let engine = engine_with(provider.clone(), EngineConfig::default());
    let handle = engine.create_session("s", demo_persona()).unwrap();
    let out = engine.run_turn(&handle, "hello there", None).await.unwrap();
    check_trace(&out.events, true).unwrap();
    assert_eq!(provider.count(ModuleTag::QueryRewrite), 0);
    assert_eq!(provider.count(ModuleTag::KnowledgeSummarize), 0);
}

#[tokio::test]
async fn replay_is_byte_identical() {
    let inputs = [
        "hi!",
        "my name is Sam",
        "I want to plan a weekend trip?",
        "I'm a bit tired today",
        "what do you draw?",
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let engine = engine_with(recording(demo_entries()), EngineConfig::default())
            .with_sources(vec![corpus()])
            .with_data_dir(dir.path())
            .unwrap();
        let handle = engine.create_session("replay", demo_persona()).unwrap();
        for input in inputs {
            engine.run_turn(&handle, input, None).await.unwrap();
        }
        let transcript = std::fs::read(dir.path().join("transcripts/replay.jsonl")).unwrap();
        let trace = std::fs::read(dir.path().join("traces/replay.jsonl")).unwrap();
        runs.push((transcript, trace));
    }
    assert!(!runs[0].0.is_empty());
    assert_eq!(runs[0], runs[1]);
}

#[tokio::test]
async fn quick_and_awareness_requests_stay_independent() {
    let provider = recording(demo_entries());
    let engine = engine_with(provider.clone(), EngineConfig::default()).with_sources(vec![corpus()]);
    let handle = engine.create_session("s", demo_persona()).unwrap();
    for input in ["hello", "a trip to the coast?", "so tired"] {
        engine.run_turn(&handle, input, None).await.unwrap();
    }
    let reqs = provider.requests();
    for r in &reqs {
        match r.module_tag {
            ModuleTag::QuickResponse => {
                assert!(!r.has_block(OTHER_STATE) && !r.has_block(KNOWLEDGE) && !r.has_block(MEMORY));
            }
            ModuleTag::OtherAwareness => assert!(!r.has_block(SELF_STATE)),
            ModuleTag::SelfAwareness => assert!(!r.has_block(OTHER_STATE)),
            _ => {}
        }
    }
    assert!(reqs.iter().any(|r| r.module_tag == ModuleTag::OtherAwareness));
}

#[tokio::test]
async fn split_perspectives_issue_two_awareness_calls() {
    let provider = recording(demo_entries());
    let cfg = EngineConfig {
        split_perspectives: true,
        ..Default::default()
    };
    let engine = engine_with(provider.clone(), cfg);
    let handle = engine.create_session("s", demo_persona()).unwrap();
    let out = engine.run_turn(&handle, "hello", None).await.unwrap();
    check_trace(&out.events, true).unwrap();
    assert_eq!(provider.count(ModuleTag::OtherAwareness), 2);
    assert_eq!(provider.count(ModuleTag::SelfAwareness), 2);
}

#[tokio::test]
async fn rethink_result_drives_next_quick_response() {
    let provider = recording(demo_entries());
    let engine = engine_with(provider.clone(), EngineConfig::default());
    let handle = engine.create_session("s", demo_persona()).unwrap();
    engine.run_turn(&handle, "hello", None).await.unwrap();
    let session = handle.session().await;
    assert_eq!(session.self_state.next_emotion.label, Emotion::Joy);
    assert_eq!(session.self_state.updated_at_turn, 0);
    provider.take_requests();

    engine.run_turn(&handle, "and then?", None).await.unwrap();
    let quick = provider.requests().into_iter().find(|r| r.module_tag == ModuleTag::QuickResponse).unwrap();
    assert!(quick.block(SELF_STATE).unwrap().contains("light and playful"));
}

#[tokio::test]
async fn concurrent_turns_on_one_session_are_serialized() {
    let entries: Vec<ScriptEntry> = demo_entries().into_iter().map(|e| e.with_latency(5)).collect();
    let provider = recording(entries);
    let engine = Arc::new(engine_with(provider.clone(), EngineConfig::default()));
    let handle = engine.create_session("s", demo_persona()).unwrap();
    let (a, b) = tokio::join!(
        engine.run_turn(&handle, "first message", None),
        engine.run_turn(&handle, "second message", None)
    );
    let (a, b) = (a.unwrap(), b.unwrap());
    assert_eq!((a.turn_index, b.turn_index), (0, 1));

    // No request carrying the second input precedes the first turn's memory extraction.
    let reqs = provider.requests();
    let last_of_first = reqs
        .iter()
        .rposition(|r| r.module_tag == ModuleTag::MemoryExtract && r.user_input() == Some("first message"))
        .unwrap();
    let first_of_second = reqs.iter().position(|r| r.user_input() == Some("second message")).unwrap();
    assert!(last_of_first < first_of_second);
    let rethink_first = reqs
        .iter()
        .position(|r| r.module_tag == ModuleTag::SelfAwareness && r.user_input() == Some("first message"))
        .unwrap();
    assert!(rethink_first < first_of_second);
}

#[tokio::test]
async fn stream_delivers_messages_in_transcript_order() {
    let engine = engine_with(recording(demo_entries()), EngineConfig::default());
    let handle = engine.create_session("s", demo_persona()).unwrap();
    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
    let out = engine.run_turn(&handle, "a trip?", Some(&tx)).await.unwrap();
    drop(tx);
    let mut streamed = Vec::new();
    let mut events = 0;
    while let Some(item) = rx.recv().await {
        match item {
            StreamItem::Message(m) => streamed.push(m),
            StreamItem::Trace(_) => events += 1,
        }
    }
    assert_eq!(streamed, out.messages);
    assert_eq!(events, out.events.len());
}

#[tokio::test]
async fn agent_plan_concludes_session() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(recording(demo_entries()), EngineConfig::default()).with_data_dir(dir.path()).unwrap();
    let handle = engine.create_session("s", demo_persona()).unwrap();
    let out = engine.run_turn(&handle, "ok goodbye!", None).await.unwrap();
    assert!(out.concluded);
    let extracted = out.event(TraceKind::MemoryExtracted).unwrap();
    assert!(extracted.payload["consolidation"].is_object());
    assert_eq!(handle.summary().status, SessionStatus::Concluded);
    assert!(matches!(engine.run_turn(&handle, "wait", None).await, Err(TurnError::SessionClosed(_))));
    assert!(matches!(engine.conclude_session(&handle).await, Err(TurnError::SessionClosed(_))));
    let persisted = engine.data_dir().unwrap().read_session("s").unwrap();
    assert_eq!(persisted.status, SessionStatus::Concluded);
}

#[tokio::test]
async fn explicit_conclude_waits_and_records_consolidation() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(recording(demo_entries()), EngineConfig::default()).with_data_dir(dir.path()).unwrap();
    let handle = engine.create_session("s", demo_persona()).unwrap();
    let (turn, report) = tokio::join!(engine.run_turn(&handle, "my name is Sam", None), engine.conclude_session(&handle));
    turn.unwrap();
    report.unwrap();
    let trace = parse_trace_jsonl(&std::fs::read_to_string(dir.path().join("traces/s.jsonl")).unwrap()).unwrap();
    assert_eq!(trace.last().unwrap().kind, TraceKind::SessionConcluded);
    assert_eq!(check_trace(&trace, true).unwrap(), 1);
    assert!(matches!(engine.run_turn(&handle, "hi", None).await, Err(TurnError::SessionClosed(_))));
}

#[tokio::test]
async fn awareness_and_quick_failure_is_turn_failed() {
    let mut entries: Vec<ScriptEntry> = demo_entries()
        .into_iter()
        .filter(|e| !matches!(e.module_tag, ModuleTag::QuickResponse | ModuleTag::OtherAwareness))
        .collect();
    entries.push(ScriptEntry::default_for(ModuleTag::QuickResponse, "").failing(ScriptFailure::Timeout));
    entries.push(ScriptEntry::default_for(ModuleTag::OtherAwareness, "").failing(ScriptFailure::Rejected));
    let engine = engine_with(recording(entries), EngineConfig::default());
    let handle = engine.create_session("s", demo_persona()).unwrap();
    let err = engine.run_turn(&handle, "hello", None).await.unwrap_err();
    let TurnError::TurnFailed(partial) = err else { panic!("expected TurnFailed") };
    check_trace(&partial.events, true).unwrap();
    assert!(partial.events.iter().any(|e| e.kind == TraceKind::Degraded));
    assert_eq!(partial.analytical_count(), 0);
    // Canned acknowledgement from the persona keeps the transcript well formed.
    assert_eq!(partial.messages.len(), 1);
    assert!(demo_persona().acknowledgements.contains(&partial.messages[0].text));
    check_turn_grammar(handle.history().await.messages(), true).unwrap();
    // The session stays usable.
    assert!(handle.session().await.is_active());
}

#[tokio::test]
async fn other_awareness_failure_alone_degrades() {
    let mut entries: Vec<ScriptEntry> =
        demo_entries().into_iter().filter(|e| e.module_tag != ModuleTag::OtherAwareness).collect();
    entries.push(ScriptEntry::new(ModuleTag::OtherAwareness, Matcher::Default, "not json at all"));
    let engine = engine_with(recording(entries), EngineConfig::default());
    let handle = engine.create_session("s", demo_persona()).unwrap();
    let out = engine.run_turn(&handle, "hello", None).await.unwrap();
    check_trace(&out.events, true).unwrap();
    let degraded: Vec<_> = out.events.iter().filter(|e| e.kind == TraceKind::Degraded).collect();
    assert_eq!(degraded.len(), 1);
    assert_eq!(degraded[0].payload["module"], "other_awareness");
    let other = out.event(TraceKind::OtherState).unwrap();
    assert_eq!(other.payload["state"]["meta_topic"], "unknown");
}

#[tokio::test]
async fn restart_resumes_numbering() {
    let dir = tempfile::tempdir().unwrap();
    {
        let engine = engine_with(recording(demo_entries()), EngineConfig::default()).with_data_dir(dir.path()).unwrap();
        let handle = engine.create_session("s", demo_persona()).unwrap();
        engine.run_turn(&handle, "my name is Sam", None).await.unwrap();
        engine.run_turn(&handle, "hello again", None).await.unwrap();
    }
    let engine = engine_with(recording(demo_entries()), EngineConfig::default()).with_data_dir(dir.path()).unwrap();
    let handle = engine.open_session("s", demo_persona()).unwrap();
    assert_eq!(handle.summary().turns, 2);
    assert!(handle.memory().await.pieces().any(|p| p.statement == "The user's name is Sam."));
    let out = engine.run_turn(&handle, "still there?", None).await.unwrap();
    assert_eq!(out.turn_index, 2);
    let trace = parse_trace_jsonl(&std::fs::read_to_string(dir.path().join("traces/s.jsonl")).unwrap()).unwrap();
    assert_eq!(check_trace(&trace, true).unwrap(), 3);
    assert_eq!(out.events[0].seq as usize, trace.len() - out.events.len());
}

#[tokio::test]
async fn backlog_is_bounded() {
    let engine = engine_with(recording(demo_entries()), EngineConfig::default());
    let handle = engine.create_session("s", demo_persona()).unwrap();
    let tickets: Vec<_> = (0..9).map(|_| handle.try_enqueue(8).unwrap()).collect();
    assert!(handle.try_enqueue(8).is_none());
    drop(tickets);
    assert_eq!(handle.pending(), 0);
    assert!(handle.try_enqueue(8).is_some());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn queued_turns_run_in_ticket_order() {
    let entries: Vec<_> = demo_entries().into_iter().map(|e| e.with_latency(5)).collect();
    let engine = Arc::new(engine_with(recording(entries), EngineConfig::default()));
    let handle = engine.create_session("s", demo_persona()).unwrap();
    let tickets: Vec<_> = (0..5).map(|i| (i, handle.try_enqueue(8).unwrap())).collect();
    let mut tasks = Vec::new();
    for (i, ticket) in tickets.into_iter().rev() {
        let (engine, handle) = (engine.clone(), handle.clone());
        tasks.push(tokio::spawn(async move {
            engine.run_queued(&handle, ticket, &format!("input {i}"), None).await.unwrap()
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let history = handle.history().await;
    let inputs: Vec<_> = history.messages().iter().filter(|m| m.is_user()).map(|m| m.text.clone()).collect();
    assert_eq!(inputs, (0..5).map(|i| format!("input {i}")).collect::<Vec<_>>());
}

#[tokio::test]
async fn abandoned_ticket_passes_its_place_on() {
    let engine = engine_with(recording(demo_entries()), EngineConfig::default());
    let handle = engine.create_session("s", demo_persona()).unwrap();
    let first = handle.try_enqueue(8).unwrap();
    let second = handle.try_enqueue(8).unwrap();
    drop(first);
    let out = engine.run_queued(&handle, second, "hello", None).await.unwrap();
    assert_eq!(out.turn_index, 0);
    assert_eq!(handle.pending(), 0);
}

#[tokio::test]
async fn turn_without_quick_slot_still_replies_when_analysis_fails() {
    let entries: Vec<ScriptEntry> = demo_entries()
        .into_iter()
        .filter(|e| e.module_tag != ModuleTag::AnalyticResponse)
        .chain([ScriptEntry::default_for(ModuleTag::AnalyticResponse, "").failing(ScriptFailure::Rejected)])
        .collect();
    let cfg = EngineConfig {
        always_quick: false,
        ..Default::default()
    };
    let engine = engine_with(recording(entries), cfg);
    let handle = engine.create_session("s", demo_persona()).unwrap();
    let out = engine.run_turn(&handle, "hello", None).await.unwrap();
    assert_eq!(out.messages.len(), 1);
    assert_eq!(out.messages[0].kind, MessageKind::Analytical);
    assert_eq!(out.messages[0].text, demo_persona().acknowledgements[0]);
    assert_eq!(out.event(TraceKind::AnalyticalEmitted).unwrap().payload["fallback"], true);
    check_trace(&out.events, true).unwrap();
    check_turn_grammar(handle.history().await.messages(), false).unwrap();
}

#[tokio::test]
async fn consolidation_runs_every_tenth_turn() {
    let engine = engine_with(recording(demo_entries()), EngineConfig::default());
    let handle = engine.create_session("s", demo_persona()).unwrap();
    for i in 0..10 {
        let out = engine.run_turn(&handle, "my name is Sam", None).await.unwrap();
        let c = &out.event(TraceKind::MemoryExtracted).unwrap().payload["consolidation"];
        assert_eq!(c.is_object(), i == 9, "turn {i}");
        if i == 9 {
            assert_eq!(c["merged"], 9);
        }
    }
    let live: Vec<_> = handle.memory().await.live().filter(|p| p.statement == "The user's name is Sam.").map(|p| p.id.clone()).collect();
    assert_eq!(live, vec!["mem-00000-00".to_string()]);
}
