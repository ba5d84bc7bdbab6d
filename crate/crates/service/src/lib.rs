//! HTTP service over the engine.
//!
//! | Method | Path | Body |
//! |---|---|---|
//! | POST | `/sessions` | `{user_id, persona_id?}` → `{session_id}` |
//! | POST | `/sessions/{id}/turns` | `{payloads, client_turn_id?}` → turn receipt |
//! | GET | `/sessions/{id}/transcript` | transcript entries |
//! | GET | `/sessions/{id}/plan` | plan snapshots |
//! | GET | `/sessions/{id}/stream?from_seq=` | server-sent events, see [`stream`] |
//! | DELETE | `/sessions/{id}` | closes the session, `{episode_id?}` |
//! | GET | `/healthz` | `{status: "ok"}` |
//!
//! Errors are `{"error": message}` with a 4xx or 5xx status.

mod error;
pub mod stream;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dualtrack_core::bus::PlanSnapshot;
use dualtrack_core::engine::DEFAULT_PERSONA;
use dualtrack_core::perception::ModalityPayload;
use dualtrack_core::state::TranscriptEntry;
use dualtrack_core::{Clock, Engine, EngineConfig, IdGen, SessionId, TurnReceipt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use error::{ApiError, ApiResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenSession {
    pub user_id: String,
    #[serde(default)]
    pub persona_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOpened {
    pub session_id: SessionId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiTurn {
    pub payloads: Vec<ModalityPayload>,
    #[serde(default)]
    pub client_turn_id: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
pub struct StreamParams {
    pub from_seq: Option<String>,
}

/// An engine on the wall clock with random session ids, reloading any
/// sessions already persisted under the configured log directory.
pub fn live_engine(cfg: EngineConfig) -> ApiResult<Arc<Engine>> {
    let log_dir = cfg.log_dir.clone();
    let engine = Engine::builder(cfg).clock(Clock::wall()).session_ids(IdGen::random()).build()?;
    if let Some(dir) = log_dir {
        if dir.exists() {
            let restored = engine.restore(&dir)?;
            tracing::info!(sessions = restored.len(), "restored sessions from {}", dir.display());
        }
    }
    Ok(engine)
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(open_session))
        .route("/sessions/{id}", axum::routing::delete(close_session))
        .route("/sessions/{id}/turns", post(post_turn))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/sessions/{id}/plan", get(plan))
        .route("/sessions/{id}/stream", get(stream_session))
        .with_state(engine)
}

/// Bind `addr` and serve until the process ends.
pub async fn serve(engine: Arc<Engine>, addr: SocketAddr) -> ApiResult<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(engine)).await?;
    Ok(())
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn open_session(
    State(engine): State<Arc<Engine>>,
    Json(req): Json<OpenSession>,
) -> ApiResult<(StatusCode, Json<SessionOpened>)> {
    let persona = req.persona_id.as_deref().unwrap_or(DEFAULT_PERSONA);
    let session_id = engine.open_session(&req.user_id, persona)?;
    Ok((StatusCode::CREATED, Json(SessionOpened { session_id })))
}

async fn post_turn(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Json(turn): Json<ApiTurn>,
) -> ApiResult<Json<TurnReceipt>> {
    let receipt = engine.turn(&SessionId::new(id), turn.payloads, turn.client_turn_id).await?;
    Ok(Json(receipt))
}

async fn transcript(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<TranscriptEntry>>> {
    Ok(Json(engine.transcript(&SessionId::new(id))?))
}

async fn plan(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<Json<Vec<PlanSnapshot>>> {
    let session = SessionId::new(id);
    if !engine.store().contains(&session) {
        return Err(dualtrack_core::Error::SessionNotFound(session).into());
    }
    Ok(Json(engine.plan(&session)))
}

async fn close_session(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let episode = engine.close_session(&SessionId::new(id)).await?;
    Ok(Json(json!({ "episode_id": episode.map(|e| e.episode_id) })))
}

async fn stream_session(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Query(params): Query<StreamParams>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let session = SessionId::new(id);
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(|last| last + 1);
    let from_seq = match (params.from_seq.as_deref(), resume) {
        (Some(raw), _) => match raw.trim().parse::<u64>() {
            Ok(n) => n,
            Err(_) => {
                // Still a stream, so clients handle the failure in one place.
                let frame = stream::error_frame(&format!("from_seq '{raw}' is not a sequence number"));
                let once = futures::stream::iter([Ok::<_, std::convert::Infallible>(frame)]);
                return Ok(Sse::new(once).into_response());
            }
        },
        (None, Some(n)) => n,
        (None, None) => 0,
    };
    let feed = stream::session_stream(engine, session, from_seq)?;
    Ok(Sse::new(feed).keep_alive(KeepAlive::default()).into_response())
}
