mod common;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use common::{evicode, s, toy_dir};
use evicode_cli::service::{router, AppState};
use evicode_core::config::Config;
use evicode_core::pipeline::Engine;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(config: &Path, sessions: Option<&Path>) -> Router {
    let engine = Engine::from_config(Config::load(config).unwrap()).unwrap();
    router(Arc::new(AppState::new(
        Arc::new(engine),
        sessions.map(Path::to_path_buf),
    )))
}

async fn call(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> (StatusCode, Vec<u8>) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    (
        status,
        to_bytes(response.into_body(), usize::MAX).await.unwrap().to_vec(),
    )
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
    let body = if body.is_null() {
        String::new()
    } else {
        body.to_string()
    };
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn event(session: &str, ts: u64, record: &str, action: &str, payload: &str, elapsed_ms: u64) -> Value {
    json!({
        "session_id": session, "timestamp": ts, "record_id": record, "diagnosis_index": 0,
        "action": action, "payload": payload, "elapsed_ms": elapsed_ms,
    })
}

#[tokio::test]
async fn coding_matches_batch_output() {
    let (dir, config) = toy_dir();
    let corpus = dir.path().join("corpus");
    let out_dir = dir.path().join("out");
    let out = evicode(&["--config", s(&config), "code", "--in", s(&corpus), "--out", s(&out_dir)]);
    assert!(out.status.success());

    let app = app(&config, None);
    let (status, health) = call_json(&app, "GET", "/v1/health", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["verifier"], "builtin:v1");

    for id in ["toy-001", "toy-002", "toy-003", "toy-004", "toy-005"] {
        let record = fs::read(corpus.join(format!("{id}.json"))).unwrap();
        let (status, created) = call(&app, "POST", "/v1/records", record).await;
        assert_eq!(status, StatusCode::CREATED);
        assert_eq!(serde_json::from_slice::<Value>(&created).unwrap()["record_id"], id);

        let (status, body) = call(&app, "POST", &format!("/v1/records/{id}/code"), Body::empty()).await;
        assert_eq!(status, StatusCode::OK);
        let batch = fs::read(out_dir.join(format!("{id}.json"))).unwrap();
        assert_eq!(body, batch.strip_suffix(b"\n").unwrap());

        let (status, view) = call_json(&app, "GET", &format!("/v1/records/{id}"), Value::Null).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(view["document"]["record_id"], id);
        assert_eq!(view["result"], serde_json::from_slice::<Value>(&body).unwrap());
    }
}

#[tokio::test]
async fn records_errors() {
    let (_dir, config) = toy_dir();
    let app = app(&config, None);
    let (status, body) = call_json(&app, "GET", "/v1/records/nope", Value::Null).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nope"));
    let (status, _) = call(&app, "POST", "/v1/records/nope/code", Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/v1/records", "{\"record_id\": 3}").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "GET", "/v1/records", Body::empty()).await;
    assert_eq!(status, StatusCode::METHOD_NOT_ALLOWED);
}

#[tokio::test]
async fn session_summary_and_validation() {
    let (dir, config) = toy_dir();
    let app = app(&config, None);
    for id in ["toy-001", "toy-002"] {
        let record = fs::read(dir.path().join("corpus").join(format!("{id}.json"))).unwrap();
        call(&app, "POST", "/v1/records", record).await;
    }
    let (status, created) = call_json(&app, "POST", "/v1/sessions", Value::Null).await;
    assert_eq!(status, StatusCode::CREATED);
    let sid = created["session_id"].as_str().unwrap().to_string();
    let events_uri = format!("/v1/sessions/{sid}/events");

    // toy-001 diagnosis 0 is T00.0; the second accept is wrong
    let (status, ack) = call_json(
        &app,
        "POST",
        &events_uri,
        event(&sid, 1_000, "toy-001", "accepted", "T00.0", 100_000),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{ack}");
    assert_eq!(ack["events"], 1);
    call_json(
        &app,
        "POST",
        &events_uri,
        event(&sid, 2_000, "toy-002", "accepted", "T19.9", 80_000),
    )
    .await;

    let (status, summary) = call_json(&app, "GET", &format!("/v1/sessions/{sid}/summary"), Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["accuracy"], 0.5);
    assert_eq!(summary["mean_seconds_per_record"], 90.0);
    assert_eq!(summary["decisions"], 2);

    let (status, err) = call_json(
        &app,
        "POST",
        &events_uri,
        event(&sid, 1_500, "toy-001", "accepted", "T00.0", 1),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err["error"].as_str().unwrap().contains("earlier"));
    let (status, _) = call_json(&app, "POST", &events_uri, json!({"session_id": sid})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call_json(
        &app,
        "POST",
        &events_uri,
        event("other", 3_000, "toy-001", "accepted", "T00.0", 1),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call_json(
        &app,
        "POST",
        &events_uri,
        event(&sid, 3_000, "toy-001", "support_override", "Maybe", 1),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = call_json(&app, "GET", "/v1/sessions/missing/summary", Value::Null).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call_json(
        &app,
        "POST",
        "/v1/sessions/missing/events",
        event("missing", 1, "r", "accepted", "A00", 1),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call_json(&app, "POST", "/v1/sessions", json!({"session_id": "../escape"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn session_logs_replay_after_restart() {
    let (dir, config) = toy_dir();
    let logs = dir.path().join("sessions");
    fs::create_dir_all(&logs).unwrap();
    let record = fs::read(dir.path().join("corpus").join("toy-001.json")).unwrap();

    let first = app(&config, Some(&logs));
    call(&first, "POST", "/v1/records", record.clone()).await;
    let (status, _) = call_json(&first, "POST", "/v1/sessions", json!({"session_id": "coder-a"})).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, _) = call_json(&first, "POST", "/v1/sessions", json!({"session_id": "coder-a"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let uri = "/v1/sessions/coder-a/events";
    call_json(
        &first,
        "POST",
        uri,
        event("coder-a", 1, "toy-001", "accepted", "T00.1", 30_000),
    )
    .await;
    call_json(
        &first,
        "POST",
        uri,
        event("coder-a", 2, "toy-001", "modified", "T00.0", 45_000),
    )
    .await;
    call_json(
        &first,
        "POST",
        uri,
        event("coder-a", 3, "toy-001", "support_override", "Partially", 50_000),
    )
    .await;
    let (_, before) = call_json(&first, "GET", "/v1/sessions/coder-a/summary", Value::Null).await;

    let lines = fs::read_to_string(logs.join("coder-a.ndjson")).unwrap();
    let actions: Vec<String> = lines
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["action"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(actions, ["accepted", "modified", "support_override"]);

    let second = app(&config, Some(&logs));
    call(&second, "POST", "/v1/records", record).await;
    let (status, after) = call_json(&second, "GET", "/v1/sessions/coder-a/summary", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after, before);
    assert_eq!(after["accuracy"], 1.0);
    assert_eq!(after["support_overrides"], 1);
    let (status, _) = call_json(
        &second,
        "POST",
        uri,
        event("coder-a", 2, "toy-001", "rejected", "T00.0", 1),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}
