//! HTTP facade: research, streaming, and steering endpoints.
//!
//! Handlers touch sessions only through the steering enqueue and
//! read-only snapshots, so none of them waits on a running loop.

use std::convert::Infallible;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::engine::{EnqueueError, Engine, Mode, SessionHandle, SessionStatus};
use crate::ledger::Task;
use crate::stream::{self, DEFAULT_HEARTBEAT};

/// Steering phrases offered to clients as starting points.
pub const STEERING_EXAMPLES: &[&str] = &[
    "focus on peer-reviewed sources",
    "prioritize recent publications",
    "exclude blockchain",
    "avoid news articles and press releases",
    "focus on clinical trials",
    "prioritize open-source implementations",
    "skip marketing material",
    "concentrate on European regulation",
];

/// Paths reserved for the file and database endpoint families. They are
/// not served; connector-backed extensions may claim them.
pub const RESERVED_PREFIXES: &[&str] = &["/api/files", "/api/database"];

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub heartbeat: Duration,
    /// `None` allows any origin.
    pub allowed_origins: Option<Vec<String>>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            heartbeat: DEFAULT_HEARTBEAT,
            allowed_origins: None,
        }
    }
}

pub struct AppState {
    engine: Option<Arc<Engine>>,
    sessions: RwLock<IndexMap<String, SessionHandle>>,
    started: Instant,
    config: ServiceConfig,
}

impl AppState {
    /// Without an engine the service is read-only over whatever sessions
    /// are inserted, as in replay.
    pub fn new(engine: Option<Arc<Engine>>, config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            engine,
            sessions: RwLock::new(IndexMap::new()),
            started: Instant::now(),
            config,
        })
    }

    pub fn insert(&self, session: SessionHandle) {
        self.sessions.write().unwrap().insert(session.id().to_string(), session);
    }

    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.read().unwrap().get(id).cloned()
    }

    pub fn sessions(&self) -> Vec<SessionHandle> {
        self.sessions.read().unwrap().values().cloned().collect()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what} {id:?}"))
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

#[derive(Debug, Deserialize)]
pub struct ResearchRequest {
    pub query: String,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub model: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResearchStarted {
    pub session_id: String,
    pub stream_id: String,
    pub status: SessionStatus,
}

async fn start_research(State(app): Shared, body: Result<Json<ResearchRequest>, JsonRejection>) -> ApiResult<Json<ResearchStarted>> {
    let Json(req) = body?;
    if req.query.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "query must not be empty"));
    }
    let engine = app
        .engine
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "this server replays recordings and cannot start sessions"))?;
    let session = engine
        .create_session(&req.query, req.mode.unwrap_or(Mode::Standard), req.model)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    session.mark_running();
    app.insert(session.clone());
    let runner = session.clone();
    tokio::spawn(async move {
        let report = engine.run(&runner).await;
        tracing::info!(session = runner.id(), status = ?report.status, "session finished");
    });
    Ok(Json(ResearchStarted {
        session_id: session.id().to_string(),
        stream_id: session.id().to_string(),
        status: session.status(),
    }))
}

fn last_event_id(headers: &HeaderMap) -> u64 {
    headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

async fn event_stream(
    State(app): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let session = app.get(&id).ok_or_else(|| ApiError::not_found("stream", &id))?;
    let events = stream::subscribe(session, last_event_id(&headers), app.config.heartbeat).map(|e| {
        let mut event = Event::default().event(e.event_type.as_str()).data(e.data.to_string());
        if let Some(seq) = e.sequence {
            event = event.id(seq.to_string());
        }
        Ok(event)
    });
    Ok(Sse::new(events))
}

#[derive(Debug, Deserialize)]
pub struct SteeringRequest {
    pub session_id: String,
    pub text: String,
}

async fn post_steering(State(app): Shared, body: Result<Json<SteeringRequest>, JsonRejection>) -> ApiResult<Json<Value>> {
    let Json(req) = body?;
    let session = app.get(&req.session_id).ok_or_else(|| ApiError::not_found("session", &req.session_id))?;
    match session.enqueue_steering(&req.text) {
        Ok(index) => Ok(Json(json!({
            "index": index,
            "state": "queued",
            "message": "queued until the next reflection phase",
        }))),
        Err(EnqueueError::Closed(status)) => Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("session is {}; it no longer accepts steering", json!(status).as_str().unwrap_or("finished")),
        )),
        Err(EnqueueError::Invalid(e)) => Err(ApiError::new(StatusCode::BAD_REQUEST, e.to_string())),
    }
}

async fn plan(State(app): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    let session = app.get(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    let markdown = session.read(|s| s.ledger.render_markdown());
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static("text/markdown; charset=utf-8"))], markdown).into_response())
}

#[derive(Debug, Deserialize)]
pub struct StatusQuery {
    pub since_version: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusResponse {
    pub session_id: String,
    pub status: SessionStatus,
    pub current_loop: u32,
    pub max_loops: u32,
    pub version: u64,
    /// False when the caller's `since_version` is current; `tasks` is then
    /// omitted.
    pub changed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<Vec<Task>>,
    pub queued_steering_count: usize,
}

async fn status(State(app): Shared, Path(id): Path<String>, Query(q): Query<StatusQuery>) -> ApiResult<Json<StatusResponse>> {
    let session = app.get(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    // one read lock, so version and tasks always agree
    Ok(Json(session.read(|s| {
        let version = s.ledger.version();
        let changed = q.since_version != Some(version);
        StatusResponse {
            session_id: s.session_id.clone(),
            status: s.status,
            current_loop: s.current_loop,
            max_loops: s.max_loops,
            version,
            changed,
            tasks: changed.then(|| s.ledger.tasks().cloned().collect()),
            queued_steering_count: s.queue.queued_count(),
        }
    })))
}

async fn health(State(app): Shared) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "uptime_seconds": app.started.elapsed().as_secs(),
        "sessions": app.sessions.read().unwrap().len(),
        "can_start_sessions": app.engine.is_some(),
    }))
}

async fn list_sessions(State(app): Shared) -> Json<Value> {
    let sessions: Vec<Value> = app
        .sessions()
        .iter()
        .map(|s| {
            s.read(|st| {
                json!({
                    "session_id": st.session_id,
                    "topic": st.topic,
                    "mode": st.mode,
                    "status": st.status,
                    "current_loop": st.current_loop,
                    "version": st.ledger.version(),
                })
            })
        })
        .collect();
    Json(json!({ "sessions": sessions }))
}

async fn examples() -> Json<Value> {
    Json(json!({ "examples": STEERING_EXAMPLES }))
}

async fn openapi() -> Json<Value> {
    Json(openapi_document())
}

pub fn openapi_document() -> Value {
    let session_param = json!([{"name": "session_id", "in": "path", "required": true, "schema": {"type": "string"}}]);
    json!({
        "openapi": "3.0.3",
        "info": {"title": "deepsteer", "version": env!("CARGO_PKG_VERSION")},
        "paths": {
            "/deep-research": {"post": {
                "summary": "Start a research session",
                "requestBody": {"content": {"application/json": {"schema": {
                    "type": "object", "required": ["query"],
                    "properties": {
                        "query": {"type": "string"},
                        "mode": {"type": "string", "enum": ["quick", "standard", "deep"]},
                        "model": {"type": "string"}
                    }
                }}}},
                "responses": {"200": {"description": "session_id, stream_id, status"}, "400": {"description": "invalid body"}}
            }},
            "/stream/{stream_id}": {"get": {
                "summary": "Event stream; honours Last-Event-ID",
                "parameters": [{"name": "stream_id", "in": "path", "required": true, "schema": {"type": "string"}}],
                "responses": {"200": {"description": "text/event-stream"}, "404": {"description": "unknown stream"}}
            }},
            "/steering/message": {"post": {
                "summary": "Queue a steering message",
                "requestBody": {"content": {"application/json": {"schema": {
                    "type": "object", "required": ["session_id", "text"],
                    "properties": {"session_id": {"type": "string"}, "text": {"type": "string"}}
                }}}},
                "responses": {"200": {"description": "index and state"}, "400": {"description": "empty text"},
                              "404": {"description": "unknown session"}, "409": {"description": "session finished"}}
            }},
            "/steering/plan/{session_id}": {"get": {"summary": "todo.md rendering", "parameters": session_param,
                "responses": {"200": {"description": "text/markdown"}, "404": {"description": "unknown session"}}}},
            "/steering/status/{session_id}": {"get": {"summary": "Ledger status with version-based polling",
                "parameters": [session_param[0], {"name": "since_version", "in": "query", "required": false, "schema": {"type": "integer"}}],
                "responses": {"200": {"description": "status; tasks omitted when unchanged"}, "404": {"description": "unknown session"}}}},
            "/steering/interactive/session/{session_id}": {"get": {"summary": "Alias of /steering/status/{session_id}",
                "parameters": session_param, "responses": {"200": {"description": "status"}}}},
            "/steering/sessions": {"get": {"summary": "List sessions", "responses": {"200": {"description": "sessions"}}}},
            "/steering/examples": {"get": {"summary": "Example steering phrases", "responses": {"200": {"description": "examples"}}}},
            "/research-status": {"get": {"summary": "Health", "responses": {"200": {"description": "status, version, uptime"}}}},
            "/openapi.json": {"get": {"summary": "This document", "responses": {"200": {"description": "OpenAPI 3"}}}}
        },
        "x-reserved-prefixes": RESERVED_PREFIXES,
    })
}

fn cors(config: &ServiceConfig) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    match &config.allowed_origins {
        None => layer.allow_origin(Any),
        Some(origins) => layer.allow_origin(AllowOrigin::list(
            origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()),
        )),
    }
}

pub fn router(app: Arc<AppState>) -> Router {
    let cors = cors(&app.config);
    Router::new()
        .route("/deep-research", post(start_research))
        .route("/stream/{stream_id}", get(event_stream))
        .route("/steering/message", post(post_steering))
        .route("/steering/plan/{session_id}", get(plan))
        .route("/steering/status/{session_id}", get(status))
        .route("/steering/interactive/session/{session_id}", get(status))
        .route("/steering/sessions", get(list_sessions))
        .route("/steering/examples", get(examples))
        .route("/research-status", get(health))
        .route("/openapi.json", get(openapi))
        .layer(cors)
        .with_state(app)
}

/// Bind and serve until the process is stopped.
pub async fn serve(app: Arc<AppState>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}
