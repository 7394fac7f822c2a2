mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use agentloom_core::catalog;
use agentloom_core::checkpoint::api::{router, ApiState, Launcher, RunEntry, RunRegistry};
use agentloom_core::checkpoint::{CheckpointStore, StoreWait};
use agentloom_core::ids::IdMode;
use agentloom_core::orchestrator::{RunOptions, Services};
use agentloom_core::provenance::{EventKind, ProvenanceLog};
use agentloom_core::runtime::ScriptedBackend;
use agentloom_core::session::{self, FinishedRun};
use agentloom_core::toolkit::stock_registry;
use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use chrono::Utc;
use common::{catalog_script, text};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn send(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
    token: Option<&str>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    send(app, Method::GET, uri, None, None).await
}

/// Starts the model pipeline in the background, waiting on the store for
/// every decision.
fn launch_model(registry: &Arc<RunRegistry>) -> (String, std::thread::JoinHandle<FinishedRun>) {
    let name = "model";
    let params = text(&[("focus", "housing"), ("model_type", "DSGE")]);
    let spec = Arc::new(catalog::instantiate(name, &params).unwrap());
    let services = Services {
        backend: Arc::new(ScriptedBackend::new(catalog_script(name))),
        tools: Arc::new(stock_registry()),
        decisions: Arc::new(StoreWait),
        store: registry.store().clone(),
    };
    let options = RunOptions {
        fixtures: true,
        ..Default::default()
    };
    let prepared = session::prepare(spec, &params, 11, IdMode::Scripted, services, options, None, None).unwrap();
    let run_id = prepared.run_id().to_string();
    registry.register(RunEntry {
        run_id: run_id.clone(),
        pipeline: name.into(),
        started_at: Utc::now(),
        log: prepared.log.clone(),
    });
    (run_id, std::thread::spawn(move || prepared.execute().unwrap()))
}

async fn wait_pending(app: &Router, run_id: &str) -> Vec<Value> {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let (_, v) = get(app, &format!("/checkpoints?pending=true&run={run_id}")).await;
        let pending = v.as_array().unwrap().clone();
        if !pending.is_empty() || Instant::now() > deadline {
            return pending;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn resume_to_completion_over_http() {
    let registry = Arc::new(RunRegistry::new(Arc::new(CheckpointStore::new())));
    let app = router(ApiState::new(registry.clone()));
    let (run_id, handle) = launch_model(&registry);

    let mut decided = Vec::new();
    for _ in 0..3 {
        let pending = wait_pending(&app, &run_id).await;
        assert_eq!(pending.len(), 1, "{pending:?}");
        let id = pending[0]["id"].as_str().unwrap().to_string();
        let (_, summary) = get(&app, "/runs").await;
        assert_eq!(summary[0]["pending_checkpoints"], 1);
        let (status, record) = send(
            &app,
            Method::POST,
            &format!("/checkpoints/{id}/decision"),
            Some(json!({"decision": "approve", "decided_by": "reviewer"})),
            None,
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{record}");
        assert_eq!(record["decided_by"], "reviewer");
        decided.push(id);
    }
    let finished = tokio::task::spawn_blocking(move || handle.join().unwrap())
        .await
        .unwrap();
    assert_eq!(finished.run.status.to_string(), "completed");

    let (status, detail) = get(&app, &format!("/runs/{run_id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(detail["status"], "completed");
    assert_eq!(detail["checkpoints"].as_array().unwrap().len(), 3);
    assert!(!detail["transcript"].as_array().unwrap().is_empty());

    // A second decision on the same checkpoint conflicts.
    let (status, _) = send(
        &app,
        Method::POST,
        &format!("/checkpoints/{}/decision", decided[0]),
        Some(json!({"decision": "abort"})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let registry = Arc::new(RunRegistry::new(Arc::new(CheckpointStore::new())));
    let app = router(ApiState::new(registry).with_token("s3cret"));
    assert_eq!(
        send(&app, Method::GET, "/runs", None, None).await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        send(&app, Method::GET, "/runs", None, Some("wrong")).await.0,
        StatusCode::UNAUTHORIZED
    );
    let (status, body) = send(&app, Method::GET, "/runs", None, Some("s3cret")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([]));
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let registry = Arc::new(RunRegistry::new(Arc::new(CheckpointStore::new())));
    let app = router(ApiState::new(registry));
    assert_eq!(get(&app, "/runs/r-nope").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/events?run=r-nope").await.0, StatusCode::NOT_FOUND);
    let decide = |body: Value| send(&app, Method::POST, "/checkpoints/r-x:cp/decision", Some(body), None);
    assert_eq!(decide(json!({"decision": "approve"})).await.0, StatusCode::NOT_FOUND);
    assert_eq!(decide(json!({"decision": "maybe"})).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        decide(json!({"decision": "approve", "decided_by": ""})).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(decide(json!(["approve"])).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(decide(json!({"decision": "revise"})).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        decide(json!({"decision": "approve", "feedback": "x"})).await.0,
        StatusCode::BAD_REQUEST
    );
    // Without a launcher the server only observes.
    let (status, _) = send(&app, Method::POST, "/runs", Some(json!({"pipeline": "model"})), None).await;
    assert_eq!(status, StatusCode::METHOD_NOT_ALLOWED);
}

#[tokio::test]
async fn launcher_starts_runs() {
    let registry = Arc::new(RunRegistry::new(Arc::new(CheckpointStore::new())));
    let launcher: Launcher = Arc::new(|req| {
        if catalog::entry(&req.pipeline).is_some() {
            Ok(format!("r-{}", req.pipeline))
        } else {
            Err(format!("unknown pipeline {}", req.pipeline))
        }
    });
    let app = router(ApiState::new(registry).with_launcher(launcher));
    let body = json!({"pipeline": "data", "params": {"dataset": "fred"}, "seed": 3});
    let (status, v) = send(&app, Method::POST, "/runs", Some(body), None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["run_id"], "r-data");
    let (status, _) = send(&app, Method::POST, "/runs", Some(json!({"pipeline": "nope"})), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let extra = json!({"pipeline": "data", "priority": "high"});
    assert_eq!(
        send(&app, Method::POST, "/runs", Some(extra), None).await.0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn events_long_poll_wakes_on_append() {
    let registry = Arc::new(RunRegistry::new(Arc::new(CheckpointStore::new())));
    let log = ProvenanceLog::in_memory("r-poll");
    registry.register(RunEntry {
        run_id: "r-poll".into(),
        pipeline: "test".into(),
        started_at: Utc::now(),
        log: log.clone(),
    });
    let app = router(ApiState::new(registry));
    log.emit(EventKind::RunStatus, "system", json!({"status": "running"}))
        .unwrap();

    let (_, page) = get(&app, "/events?run=r-poll&after=0").await;
    assert_eq!(page["last_seq"], 1);
    assert_eq!(page["finished"], false);

    let writer = log.clone();
    std::thread::spawn(move || {
        std::thread::sleep(Duration::from_millis(150));
        writer
            .emit(EventKind::RunStatus, "system", json!({"status": "completed"}))
            .unwrap();
        writer.finish();
    });
    let started = Instant::now();
    let (_, page) = get(&app, "/events?run=r-poll&after=1&wait_ms=5000").await;
    assert!(
        started.elapsed() < Duration::from_secs(4),
        "poll should wake on the append"
    );
    assert_eq!(page["events"].as_array().unwrap().len(), 1);
    assert_eq!(page["last_seq"], 2);

    let (_, status) = get(&app, "/runs/r-poll").await;
    assert_eq!(status["status"], "completed");
}
