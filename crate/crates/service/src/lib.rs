//! HTTP API for live sessions in which a human therapist talks to a
//! simulated client, plus read-only views of profiles, reference sessions,
//! assessments and reports.
//!
//! Provider calls block, so every handler that reaches a model runs on the
//! blocking pool. Finished sessions are written to the store and assessed in
//! the background.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{Any, CorsLayer};

use clientsim_core::pipeline::{self, PipelineError, Workspace};
use clientsim_core::scoring::AspectScores;
use clientsim_core::simulation::{HumanError, HumanSession, LiveState, RunLimits, Termination};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone, Copy)]
pub struct ServiceOptions {
    pub idle_timeout: Duration,
    pub limits: RunLimits,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            limits: RunLimits::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum AssessmentStatus {
    Pending,
    Done(AspectScores),
    Failed(String),
}

struct Live {
    session: Mutex<HumanSession>,
    reference_id: String,
    profile_id: String,
    persisted: Mutex<bool>,
}

pub struct AppState {
    ws: Arc<Workspace>,
    options: ServiceOptions,
    sessions: Mutex<HashMap<String, Arc<Live>>>,
    assessments: Mutex<HashMap<String, AssessmentStatus>>,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(ws: Workspace, options: ServiceOptions) -> Arc<Self> {
        Arc::new(AppState {
            ws: Arc::new(ws),
            options,
            sessions: Mutex::new(HashMap::new()),
            assessments: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(1),
        })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    fn live(&self, id: &str) -> Result<Arc<Live>, ApiError> {
        self.sessions
            .lock()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }

    fn next_id(&self, reference: &str) -> String {
        loop {
            let n = self.counter.fetch_add(1, Ordering::Relaxed);
            let id = format!("human-{reference}-{n}");
            if !self.ws.store.contains(&id) && !self.sessions.lock().contains_key(&id) {
                return id;
            }
        }
    }

    /// Writes a closed session once and starts its assessment. Returns the
    /// stored transcript id, or `None` when there were no exchanges.
    fn finish(self: &Arc<Self>, id: &str, live: &Live) -> Result<Option<String>, ApiError> {
        let mut persisted = live.persisted.lock();
        if *persisted {
            return Ok(Some(id.to_string()));
        }
        let transcript = match live.session.lock().transcript() {
            Ok(t) => t.with_meta("profile_id", &live.profile_id),
            Err(_) => return Ok(None),
        };
        self.ws.store.replace(&transcript).map_err(ApiError::internal)?;
        *persisted = true;
        drop(persisted);
        self.assessments.lock().insert(id.to_string(), AssessmentStatus::Pending);
        let state = self.clone();
        let id = id.to_string();
        tokio::task::spawn_blocking(move || {
            let status = match pipeline::assess_session(&state.ws, &id, None) {
                Ok(r) => AssessmentStatus::Done(r.scores),
                Err(e) => {
                    log::error!("assessment of {id} failed: {e}");
                    AssessmentStatus::Failed(e.to_string())
                }
            };
            state.assessments.lock().insert(id, status);
        });
        Ok(Some(transcript.id().to_string()))
    }

    /// Times out sessions idle for longer than the configured limit.
    pub fn sweep_idle(self: &Arc<Self>) {
        let lives: Vec<(String, Arc<Live>)> = self
            .sessions
            .lock()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        for (id, live) in lives {
            let expired = {
                let mut s = live.session.lock();
                if s.state() == LiveState::Open && s.idle_for() >= self.options.idle_timeout {
                    s.time_out();
                    true
                } else {
                    false
                }
            };
            if expired {
                log::info!("session {id} timed out");
                if let Err(e) = self.finish(&id, &live) {
                    log::error!("persisting {id}: {}", e.message);
                }
            }
        }
    }

    /// Writes every session that is still open, leaving it open. Used on
    /// shutdown so no conversation is lost.
    pub fn persist_open(&self) -> usize {
        let mut n = 0;
        for (id, live) in self.sessions.lock().iter() {
            let s = live.session.lock();
            if s.state() != LiveState::Open {
                continue;
            }
            if let Ok(t) = s.transcript() {
                let t = t.with_meta("profile_id", &live.profile_id).with_meta("open_at_shutdown", "true");
                match self.ws.store.replace(&t) {
                    Ok(_) => n += 1,
                    Err(e) => log::error!("persisting {id}: {e}"),
                }
            }
        }
        n
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::NotFound(_) | PipelineError::Store(clientsim_core::model::StoreError::NotFound(_)) => {
                StatusCode::NOT_FOUND
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub profile_id: String,
    pub reference_session_id: String,
    #[serde(default)]
    pub provider: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Created {
    pub session_id: String,
    pub client_greeting: Option<String>,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    if let Some(p) = &req.provider {
        if !state.ws.providers.contains(p) {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("provider {p} is unavailable")));
        }
    }
    if !state.ws.has_profile(&req.profile_id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown profile {}", req.profile_id)));
    }
    if !state.ws.store.contains(&req.reference_session_id) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("unknown reference session {}", req.reference_session_id),
        ));
    }
    let client = state
        .ws
        .client_engine(&req.profile_id, &req.reference_session_id, req.provider.as_deref())
        .map_err(|e| match e {
            PipelineError::Gateway(g) => ApiError::new(StatusCode::CONFLICT, g.to_string()),
            other => other.into(),
        })?;
    let id = state.next_id(&req.reference_session_id);
    let live = Live {
        session: Mutex::new(HumanSession::new(id.clone(), client, state.options.limits)),
        reference_id: req.reference_session_id,
        profile_id: req.profile_id,
        persisted: Mutex::new(false),
    };
    state.sessions.lock().insert(id.clone(), Arc::new(live));
    Ok((
        StatusCode::CREATED,
        Json(Created {
            session_id: id,
            client_greeting: None,
        }),
    ))
}

#[derive(Debug, Deserialize)]
pub struct MessageIn {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MessageOut {
    pub client_reply: String,
    pub turn_index: usize,
    pub ended: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(msg): Json<MessageIn>,
) -> Result<Json<MessageOut>, ApiError> {
    let live = state.live(&id)?;
    let l = live.clone();
    let result = blocking(move || l.session.lock().message(&msg.text)).await?;
    match result {
        Ok(ex) => {
            if ex.ended.is_some() {
                state.finish(&id, &live)?;
            }
            Ok(Json(MessageOut {
                client_reply: ex.client_reply,
                turn_index: ex.turn_index,
                ended: ex.ended.is_some(),
                termination: ex.ended,
            }))
        }
        Err(HumanError::NotOpen(s)) => Err(ApiError::new(StatusCode::CONFLICT, format!("session is {s:?}"))),
        Err(HumanError::EmptyMessage) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "message is empty")),
        Err(HumanError::Provider(e)) if e.is_refusal() => Err(ApiError::new(
            StatusCode::BAD_GATEWAY,
            "the simulated client refused to answer; the message was not recorded",
        )),
        Err(HumanError::Provider(e)) => Err(ApiError::new(
            StatusCode::BAD_GATEWAY,
            format!("client provider failed; the message was not recorded: {e}"),
        )),
    }
}

async fn end_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let live = state.live(&id)?;
    let termination = {
        let mut s = live.session.lock();
        s.end();
        s.termination()
    };
    let transcript_id = state.finish(&id, &live)?;
    Ok(Json(json!({
        "session_id": id,
        "transcript_id": transcript_id,
        "termination": termination,
    })))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let live = state.live(&id)?;
    let s = live.session.lock();
    let turns: Vec<Value> = s
        .turns()
        .enumerate()
        .map(|(i, (speaker, text))| json!({ "index": i, "speaker": speaker, "text": text }))
        .collect();
    Ok(Json(json!({
        "session_id": id,
        "reference_session_id": live.reference_id,
        "state": s.state(),
        "termination": s.termination(),
        "turns": turns,
    })))
}

async fn get_assessment(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let status = state.assessments.lock().get(&id).cloned();
    match status {
        Some(AssessmentStatus::Pending) => Ok((StatusCode::ACCEPTED, Json(json!({ "status": "pending" }))).into_response()),
        Some(AssessmentStatus::Done(scores)) => Ok(Json(scores).into_response()),
        Some(AssessmentStatus::Failed(e)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e)),
        None if state.sessions.lock().contains_key(&id) => {
            Ok((StatusCode::ACCEPTED, Json(json!({ "status": "open" }))).into_response())
        }
        None => {
            let ws = state.ws.clone();
            let record = blocking(move || pipeline::load_assessment(ws.root(), &id)).await??;
            Ok(Json(record.scores).into_response())
        }
    }
}

async fn get_reference(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let reference = state.live(&id)?.reference_id.clone();
    let ws = state.ws.clone();
    let rephrased = blocking(move || -> Result<_, PipelineError> {
        let original = ws.store.get(&reference)?;
        ws.rephrased(&original)
    })
    .await?
    .map_err(|e| match e {
        PipelineError::Gateway(_) | PipelineError::Simulation(_) => ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()),
        other => other.into(),
    })?;
    Ok(Json(serde_json::to_value(rephrased).map_err(ApiError::internal)?))
}

async fn list_profiles(State(state): State<Arc<AppState>>) -> Result<Json<Value>, ApiError> {
    let ws = state.ws.clone();
    let list = blocking(move || {
        ws.profile_ids()
            .into_iter()
            .filter_map(|id| {
                let p = ws.profile(&id).ok()?;
                Some(json!({ "profile_id": id, "name": p.name, "problem": p.problem }))
            })
            .collect::<Vec<_>>()
    })
    .await?;
    Ok(Json(Value::Array(list)))
}

async fn list_reports(State(state): State<Arc<AppState>>) -> Result<Json<Value>, ApiError> {
    let dir = state.ws.root().join("reports");
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    Ok(Json(json!(names)))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/health", get(health))
        .route("/profiles", get(list_profiles))
        .route("/reports", get(list_reports))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/message", post(post_message))
        .route("/sessions/{id}/end", post(end_session))
        .route("/sessions/{id}/assessment", get(get_assessment))
        .route("/sessions/{id}/reference", get(get_reference))
        .layer(cors)
        .with_state(state)
}

/// Loopback address on `port`; the service is never exposed by default.
pub fn default_addr(port: u16) -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], port))
}

/// Serves on an already bound listener until `shutdown` resolves, sweeping
/// idle sessions meanwhile, then persists sessions still open.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweeper = {
        let state = state.clone();
        let every = (state.options.idle_timeout / 4).clamp(Duration::from_millis(10), Duration::from_secs(30));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                state.sweep_idle();
            }
        })
    };
    let result = axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await;
    sweeper.abort();
    let n = state.persist_open();
    if n > 0 {
        log::info!("persisted {n} open sessions");
    }
    result
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
