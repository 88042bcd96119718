use std::convert::Infallible;
use std::sync::Arc;

use anthro_core::conversation::{Message, Role, SessionStatus};
use anthro_core::orchestrator::{StreamItem, TurnError, TurnResult};
use anthro_core::persist::DataDir;
use anthro_core::trace::{TraceEvent, TraceKind};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::registry::{Registry, RegistryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFilter {
    None,
    /// Loop decisions only.
    #[default]
    Summary,
    Full,
}

impl TraceFilter {
    fn apply(self, e: &TraceEvent) -> Option<Value> {
        match self {
            TraceFilter::None => None,
            TraceFilter::Summary if e.kind != TraceKind::LoopDecision => None,
            TraceFilter::Summary | TraceFilter::Full => Some(serde_json::to_value(e).expect("trace serializes")),
        }
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1}))).into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let status = match &e {
            RegistryError::UnknownPersona(_) | RegistryError::UnknownSession(_) => StatusCode::NOT_FOUND,
            RegistryError::Turn(TurnError::SessionClosed(_)) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session).get(list_sessions))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/sessions/{id}/transcript", get(get_transcript))
        .route("/v1/sessions/{id}/trace", get(get_trace))
        .with_state(registry)
}

#[derive(Deserialize)]
struct CreateBody {
    persona_id: String,
}

async fn create_session(
    State(reg): State<Arc<Registry>>,
    Json(body): Json<CreateBody>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let handle = reg.create(&body.persona_id)?;
    let session = handle.session().await;
    tracing::info!(session = %session.id, persona = %body.persona_id, "session created");
    Ok((StatusCode::CREATED, Json(serde_json::to_value(session).expect("session serializes"))))
}

async fn list_sessions(State(reg): State<Arc<Registry>>) -> Json<Value> {
    let list: Vec<_> = reg.list().iter().map(|h| h.summary()).collect();
    Json(serde_json::to_value(list).expect("summaries serialize"))
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

#[derive(Deserialize)]
struct MessageQuery {
    #[serde(default)]
    trace: TraceFilter,
}

fn frame(name: &str, data: &Value) -> Event {
    Event::default().event(name).data(data.to_string())
}

fn turn_end(result: &TurnResult) -> Value {
    json!({
        "turn_index": result.turn_index,
        "message_ids": result.messages.iter().map(|m| &m.id).collect::<Vec<_>>(),
        "analytical_count": result.analytical_count(),
        "trace_events": result.events.len(),
        "session_concluded": result.concluded,
    })
}

async fn post_message(
    State(reg): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(q): Query<MessageQuery>,
    Json(body): Json<MessageBody>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let handle = reg.get(&id)?;
    if handle.summary().status == SessionStatus::Concluded {
        return Err(ApiError(StatusCode::CONFLICT, format!("session {id} is concluded")));
    }
    let max_backlog = reg.engine().config().max_backlog;
    let ticket = handle
        .try_enqueue(max_backlog)
        .ok_or_else(|| ApiError(StatusCode::TOO_MANY_REQUESTS, format!("session {id} has {max_backlog} inputs queued")))?;

    let (items_tx, items_rx) = tokio::sync::mpsc::unbounded_channel::<StreamItem>();
    let (done_tx, done_rx) = tokio::sync::oneshot::channel::<Result<TurnResult, TurnError>>();
    let engine = reg.engine().clone();
    tokio::spawn(async move {
        let out = engine.run_queued(&handle, ticket, &body.text, Some(&items_tx)).await;
        if let Err(e) = &out {
            tracing::warn!(session = %handle.id(), error = %e, "turn ended with error");
        }
        drop(items_tx);
        let _ = done_tx.send(out);
    });

    let filter = q.trace;
    let items = stream::unfold(items_rx, |mut rx| async move { rx.recv().await.map(|item| (item, rx)) })
        .filter_map(move |item| async move {
            match item {
                StreamItem::Message(m) => Some(frame("message", &serde_json::to_value(&m).expect("message serializes"))),
                StreamItem::Trace(e) => filter.apply(&e).map(|v| frame("trace", &v)),
            }
        });
    let tail = stream::once(async move {
        match done_rx.await {
            Ok(Ok(result)) => frame("turn_end", &turn_end(&result)),
            Ok(Err(TurnError::TurnFailed(partial))) => frame(
                "error",
                &json!({"error": "turn failed", "kind": "turn_failed", "turn_index": partial.turn_index}),
            ),
            Ok(Err(TurnError::SessionClosed(sid))) => frame(
                "error",
                &json!({"error": format!("session {sid} is concluded"), "kind": "session_closed"}),
            ),
            Ok(Err(e)) => frame("error", &json!({"error": e.to_string(), "kind": "internal"})),
            Err(_) => frame("error", &json!({"error": "turn task aborted", "kind": "internal"})),
        }
    });
    Ok(Sse::new(items.chain(tail).map(Ok)))
}

#[derive(Deserialize)]
struct TranscriptQuery {
    #[serde(default)]
    format: TranscriptFormat,
}

#[derive(Deserialize, Default, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum TranscriptFormat {
    #[default]
    Jsonl,
    Text,
}

fn render_text(body: &str) -> Result<String, ApiError> {
    let mut out = String::new();
    for line in body.lines().filter(|l| !l.trim().is_empty()) {
        let m: Message =
            serde_json::from_str(line).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let who = match m.role {
            Role::User => "user".to_string(),
            Role::Agent => format!("agent ({})", serde_json::to_value(m.kind).expect("kind serializes").as_str().unwrap_or("")),
        };
        out.push_str(&format!(
            "[turn {} {}] {}: {}\n",
            m.turn_index,
            anthro_core::conversation::timestamp::format(&m.created_at),
            who,
            m.text
        ));
    }
    Ok(out)
}

fn data_dir(reg: &Registry) -> Result<&DataDir, ApiError> {
    reg.data_dir()
        .ok_or_else(|| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "server has no data directory".into()))
}

async fn get_transcript(
    State(reg): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(q): Query<TranscriptQuery>,
) -> Result<Response, ApiError> {
    reg.get(&id)?;
    let body = DataDir::read_or_empty(&data_dir(&reg)?.transcript_file(&id))?;
    Ok(match q.format {
        TranscriptFormat::Jsonl => ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response(),
        TranscriptFormat::Text => ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], render_text(&body)?).into_response(),
    })
}

async fn get_trace(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    reg.get(&id)?;
    let body = DataDir::read_or_empty(&data_dir(&reg)?.trace_file(&id))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
