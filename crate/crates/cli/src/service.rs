//! HTTP session service for live annotation.
//!
//! Each session is driven by a [`Session`] stepper. Feedback for one session
//! is applied under that session's mutex; reads return the snapshot published
//! after the last change. Every accepted event is appended to the session's
//! log before the response is sent, and on startup the logs are replayed.

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use caipi_core::oracle::Feedback;
use caipi_core::session::{fold_setups, ExperimentConfig, MetricRecord, Query, Session, Status};
use caipi_core::{CaipiError, CorrectionSource, Label};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::error::{CliError, Result};
use crate::store::{read_events, session_logs, Event, EventLog};

/// Error body: `{code, message, field}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>, field: Option<&str>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                field: field.map(String::from),
            },
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session `{id}`"), None)
    }

    fn bad_request(code: &str, message: impl Into<String>, field: Option<&str>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message, field)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<CaipiError> for ApiError {
    fn from(e: CaipiError) -> Self {
        let message = e.to_string();
        match e {
            CaipiError::Config { field, .. } => {
                Self::new(StatusCode::BAD_REQUEST, "invalid_config", message, Some(&field))
            }
            CaipiError::StaleIteration { .. } => {
                Self::new(StatusCode::CONFLICT, "stale_iteration", message, Some("iteration"))
            }
            CaipiError::SessionFinished => Self::new(StatusCode::GONE, "session_finished", message, None),
            CaipiError::InvalidInput(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_input", message, None),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, None),
        }
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        match e {
            CliError::Core(c) => c.into(),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string(), None),
        }
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Name inside the first pair of backticks of a deserializer message.
fn field_of(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| {
        let message = e.to_string();
        let field = field_of(&message).map(String::from);
        ApiError::bad_request("invalid_body", message, field.as_deref())
    })
}

/// Read-only view published after every change.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: String,
    pub status: Status,
    pub iteration: usize,
    pub budget: usize,
    pub num_classes: usize,
    pub query: Option<Query>,
    pub history: Vec<MetricRecord>,
    pub counterexamples: usize,
}

struct Inner {
    session: Session,
    log: EventLog,
    /// `answers[t - 1]` was accepted for iteration `t`.
    answers: Vec<Feedback>,
}

pub struct LiveSession {
    id: String,
    inner: Mutex<Inner>,
    snapshot: RwLock<Arc<Snapshot>>,
}

impl LiveSession {
    fn build(id: &str, config: &ExperimentConfig, fold: usize) -> Result<Session> {
        if fold >= config.folds {
            return Err(CaipiError::config("fold", format!("must be below folds = {}", config.folds)).into());
        }
        let setup = fold_setups(config)?.swap_remove(fold);
        log::info!("session {id}: fold {fold} of {}, budget {}", config.folds, config.session.budget);
        Ok(Session::new(setup)?)
    }

    fn publish(id: &str, inner: &mut Inner) -> Result<Snapshot> {
        let query = match inner.session.next_query() {
            Ok(q) => Some(q.clone()),
            Err(CaipiError::SessionFinished) => None,
            Err(e) => return Err(e.into()),
        };
        let s = &inner.session;
        Ok(Snapshot {
            id: id.to_string(),
            status: s.status(),
            iteration: s.iteration(),
            budget: s.setup().session.budget,
            num_classes: s.setup().task.num_classes,
            query,
            history: s.history().to_vec(),
            counterexamples: s.counterexample_log().len(),
        })
    }

    fn wrap(id: String, mut inner: Inner) -> Result<Self> {
        let snapshot = Self::publish(&id, &mut inner)?;
        Ok(LiveSession {
            id,
            inner: Mutex::new(inner),
            snapshot: RwLock::new(Arc::new(snapshot)),
        })
    }

    /// Creates a session and its log.
    pub fn create(store: &Path, id: String, config: &ExperimentConfig, fold: usize) -> Result<Self> {
        let session = Self::build(&id, config, fold)?;
        let created = Event::Created {
            config: config.to_toml(),
            fold,
        };
        let log = EventLog::create(store, &id, &created)?;
        Self::wrap(
            id,
            Inner {
                session,
                log,
                answers: Vec::new(),
            },
        )
    }

    /// Rebuilds a session by replaying its log.
    pub fn replay(id: String, path: &Path) -> Result<Self> {
        let corrupt = |message: String| CliError::CorruptStore {
            path: path.display().to_string(),
            message,
        };
        let events = read_events(path)?;
        let Event::Created { config, fold } = &events[0] else {
            unreachable!("read_events checks the first event");
        };
        let config = ExperimentConfig::from_toml_str(config).map_err(|e| corrupt(e.to_string()))?;
        let mut session = Self::build(&id, &config, *fold).map_err(|e| corrupt(e.to_string()))?;
        let mut answers = Vec::new();
        for (i, event) in events.iter().enumerate().skip(1) {
            if let Event::Feedback { feedback, source } = event {
                session
                    .apply_feedback(feedback, *source)
                    .map_err(|e| corrupt(format!("event {}: {e}", i + 1)))?;
                answers.push(feedback.clone());
            }
        }
        let log = EventLog::open(path)?;
        Self::wrap(id, Inner { session, log, answers })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Applies one answer; a repeat of an accepted answer returns its record.
    pub fn submit(&self, body: FeedbackBody) -> ApiResult<MetricRecord> {
        let mut inner = self.inner.lock().expect("session lock");
        let iteration = body
            .iteration
            .ok_or_else(|| ApiError::bad_request("missing_field", "`iteration` is required", Some("iteration")))?;
        let feedback = Feedback {
            iteration: Some(iteration),
            label: body.label,
            flagged: body.flagged,
        };
        let done = inner.session.iteration();
        if iteration >= 1 && iteration <= done {
            if inner.answers[iteration - 1] == feedback {
                return Ok(inner.session.history()[iteration - 1].clone());
            }
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "stale_iteration",
                format!("iteration {iteration} was already answered; the session is at iteration {}", done + 1),
                Some("iteration"),
            ));
        }
        let query = inner.session.next_query()?.clone();
        if iteration != query.iteration {
            return Err(CaipiError::StaleIteration {
                expected: query.iteration,
                got: iteration,
            }
            .into());
        }
        let num_classes = inner.session.setup().task.num_classes;
        if feedback.label >= num_classes {
            return Err(ApiError::bad_request(
                "invalid_input",
                format!("label {} out of range for {num_classes} classes", feedback.label),
                Some("label"),
            ));
        }
        let shown = query.explanation.indices();
        if let Some(bad) = feedback.flagged.iter().find(|j| !shown.contains(j)) {
            return Err(ApiError::bad_request(
                "invalid_input",
                format!("component {bad} is not part of the explanation"),
                Some("flagged"),
            ));
        }
        let source = body.source.unwrap_or(CorrectionSource::Human);
        let record = inner.session.apply_feedback(&feedback, source)?.clone();
        inner.log.append(&Event::Feedback {
            feedback: feedback.clone(),
            source,
        })?;
        inner.answers.push(feedback);
        let snapshot = Self::publish(&self.id, &mut inner)?;
        *self.snapshot.write().expect("snapshot lock") = Arc::new(snapshot);
        log::info!("session {}: iteration {} answered ({:?})", self.id, record.t, record.case);
        Ok(record)
    }
}

pub struct AppState {
    store: PathBuf,
    default_config: Option<ExperimentConfig>,
    sessions: RwLock<HashMap<String, Arc<LiveSession>>>,
}

impl AppState {
    /// Replays every session log in `store`. Any unreadable log aborts loading.
    pub fn load(store: &Path, default_config: Option<ExperimentConfig>) -> Result<Self> {
        let mut sessions = HashMap::new();
        for (id, path) in session_logs(store)? {
            let live = LiveSession::replay(id.clone(), &path)?;
            sessions.insert(id, Arc::new(live));
        }
        log::info!("loaded {} session(s) from {}", sessions.len(), store.display());
        Ok(AppState {
            store: store.to_path_buf(),
            default_config,
            sessions: RwLock::new(sessions),
        })
    }

    fn get(&self, id: &str) -> ApiResult<Arc<LiveSession>> {
        self.sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateBody {
    /// A TOML string or a JSON object with the same fields; defaults to the
    /// server's config.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    #[serde(default)]
    pub fold: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackBody {
    pub iteration: Option<usize>,
    pub label: Label,
    #[serde(default)]
    pub flagged: BTreeSet<usize>,
    #[serde(default)]
    pub source: Option<CorrectionSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub status: Status,
    pub iteration: usize,
    pub budget: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub record: MetricRecord,
    pub status: Status,
    /// Iteration of the next query, if any.
    pub next_iteration: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub id: String,
    pub status: Status,
    pub iteration: usize,
    pub counterexamples: usize,
    pub history: Vec<MetricRecord>,
}

fn info(s: &Snapshot) -> SessionInfo {
    SessionInfo {
        id: s.id.clone(),
        status: s.status,
        iteration: s.iteration,
        budget: s.budget,
        num_classes: s.num_classes,
    }
}

fn config_from(value: serde_json::Value) -> ApiResult<ExperimentConfig> {
    let config = match value {
        serde_json::Value::String(text) => ExperimentConfig::from_toml_str(&text)?,
        other => serde_json::from_value::<ExperimentConfig>(other).map_err(|e| {
            let message = e.to_string();
            let field = field_of(&message).unwrap_or("config").to_string();
            ApiError::bad_request("invalid_config", message, Some(&field))
        })?,
    };
    config.validate()?;
    Ok(config)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None))?
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let body: CreateBody = if body.is_empty() { CreateBody::default() } else { parse_body(&body)? };
    let config = match body.config {
        Some(v) => config_from(v)?,
        None => state.default_config.clone().ok_or_else(|| {
            ApiError::bad_request("missing_field", "no `config` given and the server has no default", Some("config"))
        })?,
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let store = state.store.clone();
    let fold = body.fold;
    let live = blocking(move || Ok(LiveSession::create(&store, id, &config, fold)?)).await?;
    let snapshot = live.snapshot();
    state
        .sessions
        .write()
        .expect("registry lock")
        .insert(snapshot.id.clone(), Arc::new(live));
    Ok((StatusCode::CREATED, Json(info(&snapshot))))
}

async fn session_info(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionInfo>> {
    Ok(Json(info(&state.get(&id)?.snapshot())))
}

async fn current_query(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Query>> {
    let snapshot = state.get(&id)?.snapshot();
    snapshot.query.clone().map(Json).ok_or_else(|| CaipiError::SessionFinished.into())
}

async fn submit_feedback(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<FeedbackResponse>> {
    let live = state.get(&id)?;
    let body: FeedbackBody = parse_body(&body)?;
    let (record, snapshot) = blocking(move || {
        let record = live.submit(body)?;
        Ok((record, live.snapshot()))
    })
    .await?;
    Ok(Json(FeedbackResponse {
        record,
        status: snapshot.status,
        next_iteration: snapshot.query.as_ref().map(|q| q.iteration),
    }))
}

async fn metrics(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Metrics>> {
    let s = state.get(&id)?.snapshot();
    Ok(Json(Metrics {
        id: s.id.clone(),
        status: s.status,
        iteration: s.iteration,
        counterexamples: s.counterexamples,
        history: s.history.clone(),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/query", get(current_query))
        .route("/sessions/{id}/feedback", post(submit_feedback))
        .route("/sessions/{id}/metrics", get(metrics))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(bind: &str, state: AppState) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| CliError::Service(format!("cannot bind {bind}: {e}")))?;
    log::info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Service(e.to_string()))
}

/// A server on its own thread and runtime, for embedding and tests.
pub struct Background {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Background {
    pub fn start(state: AppState) -> Result<Self> {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (shutdown, stop) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::bind("127.0.0.1:0").await {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = addr_tx.send(Err(e.to_string()));
                        return;
                    }
                };
                let _ = addr_tx.send(listener.local_addr().map_err(|e| e.to_string()));
                let _ = axum::serve(listener, router(Arc::new(state)))
                    .with_graceful_shutdown(async {
                        let _ = stop.await;
                    })
                    .await;
            });
        });
        let addr = addr_rx
            .recv()
            .map_err(|e| CliError::Service(e.to_string()))?
            .map_err(CliError::Service)?;
        Ok(Background {
            addr,
            shutdown: Some(shutdown),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    /// Stops accepting requests and waits for the server thread.
    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Background {
    fn drop(&mut self) {
        self.halt();
    }
}
