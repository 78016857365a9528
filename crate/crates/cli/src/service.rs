//! `/v1` HTTP API over a shared [`Engine`], with per-session append-only logs.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use evicode_core::corpus::{ingest_document, EmrDocument};
use evicode_core::pipeline::{CodingResult, Engine, PipelineError};
use evicode_core::session::{summarize_session, SessionError, SessionEvent, SessionLog};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Invalid(String),
    Conflict(String),
    Unavailable(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            Self::NotFound(m) => (StatusCode::NOT_FOUND, m),
            Self::Invalid(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            Self::Conflict(m) => (StatusCode::CONFLICT, m),
            Self::Unavailable(m) => (StatusCode::SERVICE_UNAVAILABLE, m),
            Self::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(json!({ "error": message }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Io { .. } => Self::Internal(e.to_string()),
            _ => Self::Invalid(e.to_string()),
        }
    }
}

struct StoredRecord {
    document: Arc<EmrDocument>,
    result: Option<CodingResult>,
}

pub struct AppState {
    engine: Arc<Engine>,
    records: RwLock<HashMap<String, StoredRecord>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionLog>>>>,
    session_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, session_dir: Option<PathBuf>) -> Self {
        Self {
            engine,
            records: RwLock::default(),
            sessions: RwLock::default(),
            session_dir,
        }
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.session_dir.as_ref().map(|d| d.join(format!("{id}.ndjson")))
    }

    /// A live session, or one reopened from its log file.
    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionLog>>, ApiError> {
        if let Some(s) = self.sessions.read().unwrap().get(id) {
            return Ok(s.clone());
        }
        let not_found = || ApiError::NotFound(format!("session `{id}`"));
        if !valid_session_id(id) {
            return Err(not_found());
        }
        let path = self.log_path(id).filter(|p| p.exists()).ok_or_else(not_found)?;
        let log = SessionLog::open(id, &path)?;
        let mut sessions = self.sessions.write().unwrap();
        Ok(sessions
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(log)))
            .clone())
    }

    fn gold(&self, record_id: &str, diagnosis_index: usize) -> Option<String> {
        let records = self.records.read().unwrap();
        records
            .get(record_id)
            .and_then(|r| r.document.gold_code(diagnosis_index))
            .map(str::to_string)
    }
}

fn valid_session_id(id: &str) -> bool {
    (1..=64).contains(&id.len()) && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::Invalid(format!("malformed body: {e}")))
}

fn json_text(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/records", post(create_record))
        .route("/records/{id}", get(get_record))
        .route("/records/{id}/code", post(code_record))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/events", post(append_event))
        .route("/sessions/{id}/summary", get(session_summary));
    Router::new().nest("/v1", v1).with_state(state)
}

pub async fn serve(engine: Arc<Engine>, session_dir: Option<PathBuf>, addr: SocketAddr) -> std::io::Result<()> {
    let state = Arc::new(AppState::new(engine, session_dir));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving /v1");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "codes": state.engine.assets().codes.len(),
        "verifier": state.engine.verifier().map(|v| v.id().to_string()),
        "records": state.records.read().unwrap().len(),
        "sessions": state.sessions.read().unwrap().len(),
    }))
}

#[derive(Serialize)]
struct Created {
    record_id: String,
    unknown_locations: usize,
}

/// Stores a record; re-posting an id replaces the record and drops its result.
async fn create_record(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let ingested =
        ingest_document(&body, &state.engine.assets().registry).map_err(|e| ApiError::Invalid(e.to_string()))?;
    let record_id = ingested.document.record_id.clone();
    state.records.write().unwrap().insert(
        record_id.clone(),
        StoredRecord {
            document: Arc::new(ingested.document),
            result: None,
        },
    );
    let created = Created {
        record_id,
        unknown_locations: ingested.unknown_locations,
    };
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

#[derive(Serialize)]
struct RecordView<'a> {
    document: &'a EmrDocument,
    result: Option<&'a CodingResult>,
}

async fn get_record(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let records = state.records.read().unwrap();
    let stored = records
        .get(&id)
        .ok_or_else(|| ApiError::NotFound(format!("record `{id}`")))?;
    let view = RecordView {
        document: &stored.document,
        result: stored.result.as_ref(),
    };
    Ok(Json(serde_json::to_value(view).expect("record serializes")))
}

/// Codes a stored record. The body is the same canonical JSON the batch
/// command writes.
async fn code_record(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let document = {
        let records = state.records.read().unwrap();
        let stored = records
            .get(&id)
            .ok_or_else(|| ApiError::NotFound(format!("record `{id}`")))?;
        stored.document.clone()
    };
    let engine = state.engine.clone();
    let outcome = tokio::task::spawn_blocking(move || engine.code_document(&document))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let mut result = match outcome {
        Ok(r) => r,
        Err(e @ PipelineError::NoVerifier) => return Err(ApiError::Unavailable(e.to_string())),
        Err(e) => return Err(ApiError::Internal(e.to_string())),
    };
    tracing::debug!(record = %id, total_ms = result.timings.total_ms, "coded");
    let body = result.canonical_json();
    result.timings = Default::default();
    if let Some(stored) = state.records.write().unwrap().get_mut(&id) {
        stored.result = Some(result);
    }
    Ok(json_text(StatusCode::OK, body))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSession {
    session_id: Option<String>,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let request: NewSession = if body.iter().all(u8::is_ascii_whitespace) {
        NewSession::default()
    } else {
        parse(&body)?
    };
    let id = match request.session_id {
        Some(id) if !valid_session_id(&id) => {
            return Err(ApiError::Invalid(format!(
                "session_id `{id}` must be 1-64 characters of letters, digits, `-` or `_`"
            )))
        }
        Some(id) => id,
        None => uuid::Uuid::new_v4().to_string(),
    };
    let mut sessions = state.sessions.write().unwrap();
    let exists = sessions.contains_key(&id) || state.log_path(&id).is_some_and(|p| p.exists());
    if exists {
        return Err(ApiError::Conflict(format!("session `{id}` already exists")));
    }
    let log = match state.log_path(&id) {
        Some(path) => SessionLog::open(id.clone(), &path)?,
        None => SessionLog::in_memory(id.clone()),
    };
    sessions.insert(id.clone(), Arc::new(Mutex::new(log)));
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response())
}

async fn append_event(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let session = state.session(&id)?;
    let event: SessionEvent = parse(&body)?;
    let mut log = session.lock().unwrap();
    log.append(event)?;
    Ok(Json(json!({ "appended": true, "events": log.events().len() })))
}

async fn session_summary(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let events = state.session(&id)?.lock().unwrap().events().to_vec();
    let summary = summarize_session(&id, &events, |record, index| state.gold(record, index));
    Ok(Json(serde_json::to_value(summary).expect("summary serializes")))
}
