//! HTTP API over resident runs and their checkpoints.
//!
//! | route | |
//! |---|---|
//! | `GET /runs` | run summaries, newest first |
//! | `GET /runs/{id}` | summary, transcript and checkpoint records |
//! | `POST /runs` | start a pipeline (when a launcher is installed) |
//! | `GET /checkpoints?pending=true&run=` | checkpoint records, newest first |
//! | `POST /checkpoints/{id}/decision` | decide a record |
//! | `GET /events?run=&after=&wait_ms=` | long-poll provenance events after a seq |
//!
//! With a token configured every request needs `Authorization: Bearer <token>`.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CheckpointError, CheckpointRecord, CheckpointStore, Decision};
use crate::provenance::{EventKind, ProvenanceEvent, ProvenanceLog};
use crate::spec::Params;

pub const TOKEN_ENV: &str = "AGENTLOOM_DASH_TOKEN";
/// Upper bound on a single long-poll wait.
pub const MAX_WAIT: Duration = Duration::from_secs(30);

/// A run the API can report on. Status, stage and transcript are derived
/// from the run's event log, so the API never holds state of its own.
pub struct RunEntry {
    pub run_id: String,
    pub pipeline: String,
    pub started_at: DateTime<Utc>,
    pub log: Arc<ProvenanceLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub pipeline: String,
    pub status: String,
    pub stage: Option<String>,
    pub pending_checkpoints: usize,
    pub started_at: DateTime<Utc>,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDetail {
    #[serde(flatten)]
    pub summary: RunSummary,
    pub cause: Option<String>,
    /// Message views in commit order.
    pub transcript: Vec<Value>,
    pub checkpoints: Vec<CheckpointRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPage {
    pub run_id: String,
    pub events: Vec<ProvenanceEvent>,
    /// Seq to pass as `after` on the next poll.
    pub last_seq: u64,
    pub finished: bool,
}

/// Resident runs plus the checkpoint store they share.
#[derive(Default)]
pub struct RunRegistry {
    runs: RwLock<BTreeMap<String, Arc<RunEntry>>>,
    store: Arc<CheckpointStore>,
}

impl RunRegistry {
    pub fn new(store: Arc<CheckpointStore>) -> Self {
        Self {
            runs: RwLock::default(),
            store,
        }
    }

    pub fn store(&self) -> &Arc<CheckpointStore> {
        &self.store
    }

    pub fn register(&self, entry: RunEntry) -> Arc<RunEntry> {
        let entry = Arc::new(entry);
        self.runs
            .write()
            .expect("registry lock")
            .insert(entry.run_id.clone(), entry.clone());
        entry
    }

    pub fn get(&self, run_id: &str) -> Option<Arc<RunEntry>> {
        self.runs.read().expect("registry lock").get(run_id).cloned()
    }

    /// Summaries sorted by start time, newest first.
    pub fn summaries(&self) -> Vec<RunSummary> {
        let runs: Vec<Arc<RunEntry>> = self.runs.read().expect("registry lock").values().cloned().collect();
        let mut out: Vec<RunSummary> = runs.iter().map(|r| self.summary(r)).collect();
        out.sort_by(|a, b| b.started_at.cmp(&a.started_at).then_with(|| b.run_id.cmp(&a.run_id)));
        out
    }

    pub fn summary(&self, entry: &RunEntry) -> RunSummary {
        let events = entry.log.events();
        RunSummary {
            run_id: entry.run_id.clone(),
            pipeline: entry.pipeline.clone(),
            status: status_of(&events).0,
            stage: events
                .iter()
                .rev()
                .find(|e| e.kind == EventKind::Message)
                .and_then(|e| e.payload_str("stage"))
                .map(String::from),
            pending_checkpoints: self.store.pending(Some(&entry.run_id)).len(),
            started_at: entry.started_at,
            last_seq: events.last().map_or(0, |e| e.seq),
        }
    }

    pub fn detail(&self, entry: &RunEntry) -> RunDetail {
        let events = entry.log.events();
        RunDetail {
            summary: self.summary(entry),
            cause: status_of(&events).1,
            transcript: events
                .iter()
                .filter(|e| e.kind == EventKind::Message)
                .filter_map(|e| e.payload.get("message").cloned())
                .collect(),
            checkpoints: self.store.records(Some(&entry.run_id)),
        }
    }
}

/// Latest status and cause recorded in a log; `pending` before the first
/// status event.
fn status_of(events: &[ProvenanceEvent]) -> (String, Option<String>) {
    events
        .iter()
        .rev()
        .find(|e| e.kind == EventKind::RunStatus)
        .map(|e| {
            (
                e.payload_str("status").unwrap_or("pending").to_string(),
                e.payload_str("cause").map(String::from),
            )
        })
        .unwrap_or_else(|| ("pending".to_string(), None))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaunchRequest {
    pub pipeline: String,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Starts a run in the background and returns its id once registered.
pub type Launcher = Arc<dyn Fn(LaunchRequest) -> Result<String, String> + Send + Sync>;

#[derive(Clone)]
pub struct ApiState {
    pub registry: Arc<RunRegistry>,
    pub token: Option<String>,
    pub launcher: Option<Launcher>,
}

impl ApiState {
    pub fn new(registry: Arc<RunRegistry>) -> Self {
        Self {
            registry,
            token: None,
            launcher: None,
        }
    }

    /// Reads the bearer token from `AGENTLOOM_DASH_TOKEN`; empty means none.
    pub fn with_env_token(mut self) -> Self {
        self.token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        self
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn with_launcher(mut self, launcher: Launcher) -> Self {
        self.launcher = Some(launcher);
        self
    }
}

pub fn router(state: ApiState) -> Router {
    Router::new()
        .route("/runs", get(list_runs).post(start_run))
        .route("/runs/{id}", get(run_detail))
        .route("/checkpoints", get(list_checkpoints))
        .route("/checkpoints/{id}/decision", post(decide))
        .route("/events", get(events))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn require_token(State(state): State<ApiState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let supplied = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if supplied != Some(token.as_str()) {
            return error(StatusCode::UNAUTHORIZED, "missing or wrong bearer token");
        }
    }
    next.run(req).await
}

async fn list_runs(State(state): State<ApiState>) -> Json<Vec<RunSummary>> {
    Json(state.registry.summaries())
}

async fn run_detail(State(state): State<ApiState>, Path(id): Path<String>) -> Response {
    match state.registry.get(&id) {
        Some(entry) => Json(state.registry.detail(&entry)).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown run {id}")),
    }
}

async fn start_run(State(state): State<ApiState>, body: axum::body::Bytes) -> Response {
    let Some(launcher) = state.launcher.clone() else {
        return error(StatusCode::METHOD_NOT_ALLOWED, "this server does not start runs");
    };
    let req: LaunchRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    match tokio::task::spawn_blocking(move || launcher(req)).await {
        Ok(Ok(run_id)) => (StatusCode::CREATED, Json(json!({ "run_id": run_id }))).into_response(),
        Ok(Err(e)) => error(StatusCode::BAD_REQUEST, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
struct CheckpointQuery {
    #[serde(default)]
    pending: bool,
    run: Option<String>,
}

async fn list_checkpoints(
    State(state): State<ApiState>,
    Query(q): Query<CheckpointQuery>,
) -> Json<Vec<CheckpointRecord>> {
    let store = state.registry.store();
    let records = if q.pending {
        store.pending(q.run.as_deref())
    } else {
        let mut all = store.records(q.run.as_deref());
        all.reverse();
        all
    };
    Json(records)
}

/// Body is a decision document (`{"decision": "approve"}`,
/// `{"decision": "revise", "feedback": "...", "rerun": true}`, ...) with an
/// optional `decided_by`.
fn parse_decision(body: &[u8]) -> Result<(Decision, String), String> {
    let mut doc: Value = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    let obj = doc.as_object_mut().ok_or("decision document must be an object")?;
    let by = match obj.remove("decided_by") {
        None => "api".to_string(),
        Some(Value::String(s)) if !s.trim().is_empty() => s,
        Some(_) => return Err("`decided_by` must be non-empty text".into()),
    };
    Ok((Decision::from_value(doc)?, by))
}

async fn decide(State(state): State<ApiState>, Path(id): Path<String>, body: axum::body::Bytes) -> Response {
    let (decision, by) = match parse_decision(&body) {
        Ok(d) => d,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    match state.registry.store().decide(&id, decision, &by) {
        Ok(record) => Json(record).into_response(),
        Err(e @ CheckpointError::Unknown(_)) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e @ CheckpointError::AlreadyDecided(_)) => error(StatusCode::CONFLICT, e.to_string()),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
struct EventQuery {
    run: String,
    #[serde(default)]
    after: u64,
    #[serde(default)]
    wait_ms: u64,
}

async fn events(State(state): State<ApiState>, Query(q): Query<EventQuery>) -> Response {
    let Some(entry) = state.registry.get(&q.run) else {
        return error(StatusCode::NOT_FOUND, format!("unknown run {}", q.run));
    };
    let wait = Duration::from_millis(q.wait_ms).min(MAX_WAIT);
    let log = entry.log.clone();
    let after = q.after;
    let events = if wait.is_zero() {
        log.events_after(after)
    } else {
        match tokio::task::spawn_blocking(move || log.wait_after(after, wait)).await {
            Ok(events) => events,
            Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    };
    let last_seq = events.last().map_or(after, |e| e.seq);
    Json(EventPage {
        run_id: entry.run_id.clone(),
        events,
        last_seq,
        finished: entry.log.is_finished(),
    })
    .into_response()
}

/// Serves the API until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: ApiState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
