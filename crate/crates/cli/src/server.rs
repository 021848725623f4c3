//! HTTP service over retrieval, reward scoring, training runs and review
//! sessions.
//!
//! Handlers call the same library functions as the command line. Blocking
//! work (journal syncs, remote scoring, training) runs off the async
//! workers. Session transitions serialize per session inside the store; at
//! most one training run is active at a time.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kral_core::corpus::Timestamp;
use kral_core::distill::RemoteTeacher;
use kral_core::evaluate::{EvalItem, EvalSession, SessionConfig, SessionStatus, SessionStore, Stratum, Submission};
use kral_core::grpo::{make_env, train_observed, GrpoConfig, LearningCurve};
use kral_core::index::{Index, QueryCache, RetrievalQuery, ScoredHit};
use kral_core::rewards::RewardKernel;
use kral_core::{Error, ErrorClass, PipelineConfig};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Notify;

use crate::app::{self, ScoreRequest, ScoreResponse};
use crate::error::{CliError, CliResult};

pub const TOKEN_HEADER: &str = "x-kral-token";
pub const CACHE_HEADER: &str = "x-kral-cache";
/// Environment size used by training runs that do not set one.
pub const DEFAULT_TRAIN_CASES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub run_id: String,
    pub status: RunStatus,
    pub cases: usize,
    pub config: GrpoConfig,
    pub curve: LearningCurve,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config_fingerprint: String,
}

pub struct AppState {
    pub cfg: PipelineConfig,
    pub fingerprint: String,
    pub index: Arc<Index>,
    pub cache: QueryCache,
    pub kernel: RewardKernel,
    pub sessions: SessionStore,
    pub remote: Option<Arc<RemoteTeacher>>,
    /// Where the index is flushed on shutdown.
    pub snapshot: Option<PathBuf>,
    runs: RwLock<BTreeMap<String, TrainRun>>,
    active_run: Mutex<Option<String>>,
    next_run: AtomicU64,
    shutting_down: AtomicBool,
    session_changed: Notify,
    clock: fn() -> Timestamp,
}

impl AppState {
    pub fn new(cfg: PipelineConfig, index: Index, sessions: SessionStore) -> CliResult<Self> {
        let fingerprint = cfg.fingerprint();
        Ok(AppState {
            cache: QueryCache::new(cfg.retrieval.cache_capacity),
            kernel: app::reward_kernel(&cfg)?,
            remote: app::remote_scorer(&cfg)?,
            sessions: sessions.with_fingerprint(fingerprint.clone()),
            index: Arc::new(index),
            snapshot: None,
            runs: RwLock::new(BTreeMap::new()),
            active_run: Mutex::new(None),
            next_run: AtomicU64::new(1),
            shutting_down: AtomicBool::new(false),
            session_changed: Notify::new(),
            clock: Timestamp::now,
            fingerprint,
            cfg,
        })
    }

    /// Opens the data directory: the snapshot, if present, and the session
    /// journals. A corrupt snapshot or journal is an error.
    pub fn open(cfg: PipelineConfig, data_dir: &std::path::Path) -> CliResult<Self> {
        let snapshot = app::snapshot_path(data_dir);
        let index = if snapshot.exists() {
            app::load_index(&cfg, &snapshot)?
        } else {
            tracing::warn!(path = %snapshot.display(), "no index snapshot; starting empty");
            app::empty_index(&cfg)?
        };
        let sessions = SessionStore::open(app::sessions_dir(data_dir))?;
        let mut state = AppState::new(cfg, index, sessions)?;
        state.snapshot = Some(snapshot);
        Ok(state)
    }

    /// Replaces the wall clock used for recency, for reproducible responses.
    pub fn with_clock(mut self, clock: fn() -> Timestamp) -> Self {
        self.clock = clock;
        self
    }

    pub fn now(&self) -> Timestamp {
        (self.clock)()
    }

    pub fn run(&self, run_id: &str) -> Option<TrainRun> {
        self.runs.read().get(run_id).cloned()
    }

    /// Stops the active run after its current step and writes the snapshot.
    pub fn shutdown(&self) -> CliResult<()> {
        self.shutting_down.store(true, Ordering::SeqCst);
        self.session_changed.notify_waiters();
        if let Some(path) = &self.snapshot {
            if !self.index.is_empty() {
                self.index.save_snapshot_stamped(path, Some(&self.fingerprint))?;
                tracing::info!(path = %path.display(), "index snapshot flushed");
            }
        }
        Ok(())
    }
}

/// A library error as an HTTP response.
#[derive(Debug)]
pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub class: String,
}

fn status_of(e: &Error) -> StatusCode {
    match e {
        Error::UnknownSession(_) | Error::UnknownChunk(_) => StatusCode::NOT_FOUND,
        Error::Protocol(_) | Error::EmptyIndex => StatusCode::CONFLICT,
        _ => match e.class() {
            ErrorClass::Config | ErrorClass::Input => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorClass::Remote => StatusCode::BAD_GATEWAY,
            ErrorClass::Evaluation => StatusCode::CONFLICT,
            ErrorClass::Index | ErrorClass::Training | ErrorClass::Io => StatusCode::INTERNAL_SERVER_ERROR,
        },
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_of(&self.0);
        let body = ErrorBody {
            error: self.0.to_string(),
            class: format!("{:?}", self.0.class()).to_lowercase(),
        };
        (status, Json(body)).into_response()
    }
}

fn conflict(msg: impl Into<String>) -> Response {
    let body = ErrorBody {
        error: msg.into(),
        class: "conflict".into(),
    };
    (StatusCode::CONFLICT, Json(body)).into_response()
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = Arc<AppState>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> kral_core::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(Error::Io(std::io::Error::other(e.to_string()))))?
        .map_err(ApiError)
}

pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/query", post(query))
        .route("/score", post(score))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/scores", post(submit_score))
        .route("/train", post(start_train))
        .route("/train/{run}", get(get_run))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new().route("/health", get(health)).merge(api).with_state(state)
}

async fn require_token(State(state): State<Shared>, headers: HeaderMap, req: Request, next: Next) -> Response {
    match &state.cfg.service.token {
        Some(token) if headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok()) != Some(token.as_str()) => {
            let body = ErrorBody {
                error: format!("missing or wrong {TOKEN_HEADER} header"),
                class: "auth".into(),
            };
            (StatusCode::UNAUTHORIZED, Json(body)).into_response()
        }
        _ => next.run(req).await,
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub config_fingerprint: String,
}

async fn health(State(state): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        config_fingerprint: state.fingerprint.clone(),
    })
}

async fn query(State(state): State<Shared>, Json(q): Json<RetrievalQuery>) -> ApiResult<Response> {
    let (hits, cached) = blocking(move || {
        let now = state.now();
        state.index.cached_search(&q, &state.cache, now)
    })
    .await?;
    let mut resp = Json::<Vec<ScoredHit>>(hits).into_response();
    resp.headers_mut().insert(CACHE_HEADER, HeaderValue::from_static(if cached { "hit" } else { "miss" }));
    Ok(resp)
}

async fn score(State(state): State<Shared>, Json(req): Json<ScoreRequest>) -> ApiResult<Json<ScoreResponse>> {
    Ok(Json(blocking(move || app::score(&state.kernel, &req)).await?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub items: Vec<EvalItem>,
    /// Defaults to the configured session settings.
    #[serde(default)]
    pub config: Option<SessionConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub status: SessionStatus,
}

async fn create_session(State(state): State<Shared>, Json(req): Json<CreateSession>) -> ApiResult<(StatusCode, Json<Created>)> {
    let session = blocking(move || {
        let mut items = req.items;
        app::prepare_items(&state.cfg, &mut items, state.remote.as_deref())?;
        let config = req.config.unwrap_or_else(|| state.cfg.evaluation.session.clone());
        state.sessions.create(items, config)
    })
    .await?;
    Ok((
        StatusCode::CREATED,
        Json(Created {
            session_id: session.session_id,
            status: session.status,
        }),
    ))
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<EvalSession>> {
    Ok(Json(state.sessions.get(&id)?))
}

#[derive(Debug, Deserialize)]
pub struct NextParams {
    pub reviewer: String,
    /// Seconds to wait for work; capped by the configured long-poll limit.
    #[serde(default)]
    pub wait: Option<u64>,
}

/// What a reviewer sees before scoring: no avatar scores or strata
/// statistics, so the human score is not anchored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindItem {
    pub item_id: String,
    pub case_text: String,
    pub therapy_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextItem {
    /// Absent when nothing is pending for this reviewer.
    pub item: Option<BlindItem>,
    pub stratum: Option<Stratum>,
    pub round: Option<u32>,
    pub status: SessionStatus,
}

async fn next_item(State(state): State<Shared>, Path(id): Path<String>, Query(p): Query<NextParams>) -> ApiResult<Json<NextItem>> {
    if p.reviewer.is_empty() {
        return Err(Error::Precondition("reviewer must not be empty".into()).into());
    }
    let limit = state.cfg.service.long_poll_secs;
    let deadline = Instant::now() + Duration::from_secs(p.wait.unwrap_or(limit).min(limit));
    loop {
        let changed = state.session_changed.notified();
        tokio::pin!(changed);
        changed.as_mut().enable();
        let session = state.sessions.get(&id)?;
        let pending = session.next_for(&p.reviewer);
        let remaining = deadline.saturating_duration_since(Instant::now());
        if pending.is_some() || session.is_terminated() || remaining.is_zero() || state.shutting_down.load(Ordering::SeqCst) {
            return Ok(Json(match pending {
                Some(pi) => NextItem {
                    item: Some(BlindItem {
                        item_id: pi.item.item_id,
                        case_text: pi.item.case_text,
                        therapy_text: pi.item.therapy_text,
                    }),
                    stratum: Some(pi.stratum),
                    round: Some(pi.round),
                    status: session.status,
                },
                None => NextItem {
                    item: None,
                    stratum: None,
                    round: None,
                    status: session.status,
                },
            }));
        }
        let _ = tokio::time::timeout(remaining, changed).await;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSubmission {
    pub item_id: String,
    pub reviewer: String,
    pub score: u8,
}

async fn submit_score(State(state): State<Shared>, Path(id): Path<String>, Json(s): Json<ScoreSubmission>) -> ApiResult<Json<Submission>> {
    let st = state.clone();
    let out = blocking(move || st.sessions.update(&id, |session| session.submit(&s.item_id, &s.reviewer, s.score))).await;
    state.session_changed.notify_waiters();
    Ok(Json(out?))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    /// Cases in the training environment.
    #[serde(default)]
    pub cases: Option<usize>,
    /// Fields of the GRPO config to override.
    #[serde(default)]
    pub overrides: Option<Value>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainStarted {
    pub run_id: String,
}

/// Merges `overrides` into `base` field by field; unknown fields are rejected.
pub fn apply_overrides(base: &GrpoConfig, overrides: Option<&Value>) -> kral_core::Result<GrpoConfig> {
    let Some(over) = overrides else {
        return Ok(base.clone());
    };
    let Value::Object(over) = over else {
        return Err(Error::InvalidConfig("overrides must be an object".into()));
    };
    let mut merged = serde_json::to_value(base)?;
    merge(&mut merged, over);
    let cfg: GrpoConfig = serde_json::from_value(merged).map_err(|e| Error::InvalidConfig(format!("grpo overrides: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(dst: &mut Value, src: &serde_json::Map<String, Value>) {
    let Value::Object(d) = dst else { return };
    for (k, v) in src {
        match (d.get_mut(k), v) {
            (Some(slot @ Value::Object(_)), Value::Object(inner)) => merge(slot, inner),
            _ => {
                d.insert(k.clone(), v.clone());
            }
        }
    }
}

async fn start_train(State(state): State<Shared>, Json(req): Json<TrainRequest>) -> ApiResult<Response> {
    let config = apply_overrides(&state.cfg.grpo, req.overrides.as_ref())?;
    let cases = req.cases.unwrap_or(DEFAULT_TRAIN_CASES);
    let run_id = {
        let mut active = state.active_run.lock();
        if let Some(r) = active.as_ref() {
            return Ok(conflict(format!("training run `{r}` is still running")));
        }
        let id = format!("run-{:04}", state.next_run.fetch_add(1, Ordering::SeqCst));
        *active = Some(id.clone());
        id
    };
    state.runs.write().insert(
        run_id.clone(),
        TrainRun {
            run_id: run_id.clone(),
            status: RunStatus::Running,
            cases,
            config: config.clone(),
            curve: LearningCurve::default(),
            error: None,
            config_fingerprint: state.fingerprint.clone(),
        },
    );
    let st = state.clone();
    let id = run_id.clone();
    tokio::task::spawn_blocking(move || {
        let result = make_env(config.seed, cases).and_then(|env| {
            let initial = env.initial_policy()?;
            train_observed(&env, &config, initial, |curve| {
                if let Some(r) = st.runs.write().get_mut(&id) {
                    r.curve = curve.clone();
                }
                !st.shutting_down.load(Ordering::SeqCst)
            })
        });
        let mut runs = st.runs.write();
        if let Some(r) = runs.get_mut(&id) {
            match result {
                Ok(out) => {
                    r.status = if out.curve.steps.len() < config.steps { RunStatus::Cancelled } else { RunStatus::Completed };
                    r.curve = out.curve;
                }
                Err(e) => {
                    tracing::error!(run = %id, error = %e, "training run failed");
                    r.status = RunStatus::Failed;
                    r.error = Some(e.to_string());
                }
            }
        }
        drop(runs);
        *st.active_run.lock() = None;
    });
    Ok((StatusCode::ACCEPTED, Json(TrainStarted { run_id })).into_response())
}

async fn get_run(State(state): State<Shared>, Path(run): Path<String>) -> Response {
    match state.run(&run) {
        Some(r) => Json(r).into_response(),
        None => {
            let body = ErrorBody {
                error: format!("unknown training run `{run}`"),
                class: "not-found".into(),
            };
            (StatusCode::NOT_FOUND, Json(body)).into_response()
        }
    }
}

/// Binds the configured address and serves until ctrl-c, then flushes.
pub async fn serve(state: AppState) -> CliResult<()> {
    let bind = state.cfg.service.bind.clone();
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| CliError::Server(format!("cannot bind {bind}: {e}")))?;
    let addr = listener.local_addr()?;
    tracing::info!(%addr, fingerprint = %state.fingerprint, "serving");
    let state = Arc::new(state);
    let app = router(state.clone());
    let signal = {
        let state = state.clone();
        async move {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
            state.shutting_down.store(true, Ordering::SeqCst);
            state.session_changed.notify_waiters();
        }
    };
    axum::serve(listener, app)
        .with_graceful_shutdown(signal)
        .await
        .map_err(|e| CliError::Server(e.to_string()))?;
    state.shutdown()
}
