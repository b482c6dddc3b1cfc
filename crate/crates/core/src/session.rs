//! HTTP service for games against a live human.
//!
//! Routes:
//!
//! - `POST /sessions` creates a game and returns its id, the grid size and
//!   the human's own prior observations
//! - `POST /sessions/{id}/ai-move` runs the AI policy and returns its column
//! - `POST /sessions/{id}/user-move` with `{"y": int}` completes the round
//! - `GET /sessions/{id}` returns the public state of the game
//!
//! Errors are JSON objects `{code, message}`. Every session sits behind its
//! own lock; a move request that finds the lock held is answered with 409
//! rather than queued. Sessions are stored as one JSON file each and restored by
//! replaying their rounds, so they survive a restart.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::agents::{AiMove, PolicyKind};
use crate::error::{Error, Result};
use crate::experiment::write_atomic;
use crate::game::{Game, GameConfig, Partner, Phase, Round};
use crate::grid::{Observation, ObjectiveSpec, PriorKind};
use crate::planner::RewardConfig;
use crate::user_model::UserParams;

/// Planner budget for live play.
pub fn live_planner() -> RewardConfig {
    RewardConfig {
        n_root_samples: 8,
        n_rollouts_per_action: 4,
        ..RewardConfig::default()
    }
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}
fn default_store() -> PathBuf {
    PathBuf::from("sessions")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// Directory holding one JSON file per session.
    #[serde(default = "default_store")]
    pub store_dir: PathBuf,
    #[serde(default = "live_planner")]
    pub planner: RewardConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            store_dir: default_store(),
            planner: live_planner(),
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `COOPBO_LISTEN`, `COOPBO_STORE`, `COOPBO_ROOT_SAMPLES` and
    /// `COOPBO_ROLLOUTS` when set.
    pub fn with_env(mut self) -> Result<Self> {
        let var = |k: &str| std::env::var(k).ok();
        let parse_err = |k: &str, v: &str| Error::Config(format!("{k}={v:?} is not valid"));
        if let Some(v) = var("COOPBO_LISTEN") {
            self.listen = v.parse().map_err(|_| parse_err("COOPBO_LISTEN", &v))?;
        }
        if let Some(v) = var("COOPBO_STORE") {
            self.store_dir = PathBuf::from(v);
        }
        if let Some(v) = var("COOPBO_ROOT_SAMPLES") {
            self.planner.n_root_samples = v.parse().map_err(|_| parse_err("COOPBO_ROOT_SAMPLES", &v))?;
        }
        if let Some(v) = var("COOPBO_ROLLOUTS") {
            self.planner.n_rollouts_per_action = v.parse().map_err(|_| parse_err("COOPBO_ROLLOUTS", &v))?;
        }
        Ok(self)
    }
}

/// Body of `POST /sessions`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub policy: PolicyKind,
    #[serde(default = "default_rounds", alias = "T")]
    pub rounds: usize,
    /// Full objective specification; overrides `function`.
    #[serde(default)]
    pub objective: Option<ObjectiveSpec>,
    /// Index of a standard objective.
    #[serde(default)]
    pub function: usize,
    pub user_prior: PriorKind,
    #[serde(default = "default_ai_prior")]
    pub ai_prior: PriorKind,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_rounds() -> usize {
    20
}
fn default_ai_prior() -> PriorKind {
    PriorKind::Global
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub id: String,
    pub nx: usize,
    pub ny: usize,
    pub rounds: usize,
    pub user_prior: Vec<Observation>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AiMoveResponse {
    pub ix: usize,
    /// 1-based round the move belongs to.
    pub round: usize,
}

#[derive(Clone, Debug, Deserialize)]
pub struct UserMoveRequest {
    pub y: i64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UserMoveResponse {
    pub z: f64,
    pub score: f64,
    pub round: usize,
    pub finished: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub x: usize,
    pub y: usize,
    pub z: f64,
}

/// Body of `GET /sessions/{id}`. The true objective appears only once the
/// game is finished.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateResponse {
    pub id: String,
    pub policy: PolicyKind,
    pub phase: Phase,
    pub nx: usize,
    pub ny: usize,
    pub rounds: usize,
    pub history: Vec<HistoryEntry>,
    pub scores: Vec<f64>,
    pub pending_ix: Option<usize>,
    pub user_prior: Vec<Observation>,
    pub final_score: Option<f64>,
    /// Noiseless objective as `true_grid[ix][iy]`.
    pub true_grid: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"))
    }

    fn busy() -> Self {
        Self::new(StatusCode::CONFLICT, "busy", "another request is changing this session")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::Protocol(_) => (StatusCode::CONFLICT, "wrong_phase"),
            Error::OutOfRange { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "out_of_range"),
            Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidObjective(_) => (StatusCode::BAD_REQUEST, "invalid_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_body", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// What is written to disk for a session.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct StoredSession {
    id: String,
    config: GameConfig,
    rounds: Vec<Round>,
    pending: Option<AiMove>,
}

type Slot = Arc<tokio::sync::Mutex<Game>>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store_dir: PathBuf,
    planner: RewardConfig,
    sessions: Mutex<HashMap<String, Slot>>,
}

impl AppState {
    pub fn new(cfg: &ServiceConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.store_dir).map_err(|e| Error::io(&cfg.store_dir, e))?;
        Ok(Self {
            inner: Arc::new(Inner {
                store_dir: cfg.store_dir.clone(),
                planner: cfg.planner,
                sessions: Mutex::new(HashMap::new()),
            }),
        })
    }

    fn path(&self, id: &str) -> PathBuf {
        self.inner.store_dir.join(format!("{id}.json"))
    }

    fn persist(&self, id: &str, game: &Game) -> Result<()> {
        let stored = StoredSession {
            id: id.to_string(),
            config: game.config().clone(),
            rounds: game.rounds().to_vec(),
            pending: game.pending(),
        };
        write_atomic(&self.path(id), serde_json::to_string(&stored)?.as_bytes())
    }

    fn restore(&self, id: &str) -> Result<Option<Game>> {
        let path = self.path(id);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let stored: StoredSession = serde_json::from_str(&text)?;
        let mut game = Game::new(stored.config, Partner::Human)?;
        for r in &stored.rounds {
            game.replay_round(r.ix, r.iy, r.z)?;
        }
        game.set_pending(stored.pending)?;
        Ok(Some(game))
    }

    /// The session's slot, loading it from disk on first use.
    fn slot(&self, id: &str) -> ApiResult<Slot> {
        let valid = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        if !valid {
            return Err(ApiError::not_found(id));
        }
        if let Some(s) = self.inner.sessions.lock().expect("session map lock").get(id) {
            return Ok(s.clone());
        }
        let game = self.restore(id)?.ok_or_else(|| ApiError::not_found(id))?;
        let mut map = self.inner.sessions.lock().expect("session map lock");
        Ok(map
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(tokio::sync::Mutex::new(game)))
            .clone())
    }
}

fn state_of(id: &str, game: &Game) -> StateResponse {
    let grid = game.grid();
    let finished = game.phase() == Phase::Finished;
    StateResponse {
        id: id.to_string(),
        policy: game.config().policy,
        phase: game.phase(),
        nx: grid.nx(),
        ny: grid.ny(),
        rounds: game.config().rounds,
        history: game
            .rounds()
            .iter()
            .map(|r| HistoryEntry { x: r.ix, y: r.iy, z: r.z })
            .collect(),
        scores: game.scores().to_vec(),
        pending_ix: game.pending().map(AiMove::ix),
        user_prior: game.user_prior().as_slice().to_vec(),
        final_score: finished.then(|| game.scores().last().copied()).flatten(),
        true_grid: finished.then(|| game.objective().values().chunks(grid.ny()).map(<[f64]>::to_vec).collect()),
    }
}

async fn create(State(app): State<AppState>, body: std::result::Result<Json<CreateRequest>, JsonRejection>) -> ApiResult<(StatusCode, Json<CreateResponse>)> {
    let Json(req) = body?;
    if req.policy.is_single_agent() || req.policy == PolicyKind::StrategicAiKnownUser {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_request",
            format!("policy {} cannot play with a human", req.policy),
        ));
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    let seed = req.seed.unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0);
    let mut cfg = GameConfig::new(
        req.policy,
        // unused without a synthetic user
        UserParams { alpha: 0.0, beta: 0.0, sigma: 0.0 },
        req.ai_prior,
        req.user_prior,
        seed,
    );
    cfg.rounds = req.rounds;
    cfg.objective = req.objective.unwrap_or_else(|| ObjectiveSpec::standard(req.function));
    cfg.planner = app.inner.planner;
    cfg.entropy_samples = 0;
    let game = tokio::task::spawn_blocking(move || Game::new(cfg, Partner::Human))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    app.persist(&id, &game)?;
    let grid = game.grid();
    let resp = CreateResponse {
        id: id.clone(),
        nx: grid.nx(),
        ny: grid.ny(),
        rounds: game.config().rounds,
        user_prior: game.user_prior().as_slice().to_vec(),
    };
    app.inner
        .sessions
        .lock()
        .expect("session map lock")
        .insert(id, Arc::new(tokio::sync::Mutex::new(game)));
    Ok((StatusCode::CREATED, Json(resp)))
}

async fn ai_move(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<AiMoveResponse>> {
    let slot = app.slot(&id)?;
    let mut guard = slot.try_lock_owned().map_err(|_| ApiError::busy())?;
    let resp = tokio::task::spawn_blocking(move || -> Result<AiMoveResponse> {
        let mv = guard.ai_move()?;
        app.persist(&id, &guard)?;
        Ok(AiMoveResponse {
            ix: mv.ix(),
            round: guard.rounds().len() + 1,
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(resp))
}

async fn user_move(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: std::result::Result<Json<UserMoveRequest>, JsonRejection>,
) -> ApiResult<Json<UserMoveResponse>> {
    let slot = app.slot(&id)?;
    let Json(req) = body?;
    let mut guard = slot.try_lock_owned().map_err(|_| ApiError::busy())?;
    if guard.phase() != Phase::AwaitingUserMove {
        return Err(Error::Protocol(format!("expected phase AwaitingUserMove, game is in {:?}", guard.phase())).into());
    }
    let ny = guard.grid().ny();
    let iy = usize::try_from(req.y)
        .ok()
        .filter(|&y| y < ny)
        .ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "out_of_range", format!("y = {} outside [0, {ny})", req.y)))?;
    let resp = tokio::task::spawn_blocking(move || -> Result<UserMoveResponse> {
        let out = guard.user_move(iy)?;
        app.persist(&id, &guard)?;
        Ok(UserMoveResponse {
            z: out.z,
            score: out.score,
            round: out.round,
            finished: out.finished,
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(resp))
}

async fn get_state(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<StateResponse>> {
    let slot = app.slot(&id)?;
    let guard = slot.lock().await;
    Ok(Json(state_of(&id, &guard)))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(get_state))
        .route("/sessions/{id}/ai-move", post(ai_move))
        .route("/sessions/{id}/user-move", post(user_move))
        .with_state(state)
}

/// Serves until interrupted.
pub async fn serve(cfg: ServiceConfig) -> Result<()> {
    let app = router(AppState::new(&cfg)?);
    let listener = tokio::net::TcpListener::bind(cfg.listen)
        .await
        .map_err(|e| Error::io(cfg.listen.to_string(), e))?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(cfg.listen.to_string(), e))
}
