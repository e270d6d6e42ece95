//! HTTP+JSON session API over the active learning engine.
//!
//! Each session owns one [`balaf_core::engine::Session`] over a
//! [`balaf_core::map::MapBelief`]. Mutations of one session are serialized
//! by a per-session lock; sessions are independent of each other. After every
//! step the session record is written to the state directory, and on start
//! the records are replayed to rebuild the sessions.
//!
//! Routes:
//!
//! - `GET /bundles`
//! - `POST /sessions`
//! - `GET /sessions/{id}`
//! - `GET /sessions/{id}/query`
//! - `POST /sessions/{id}/respond` (header `Idempotency-Key`)
//! - `GET /sessions/{id}/predictions`
//! - `GET /sessions/{id}/checkpoints/{h|r}`

pub mod api;
pub mod error;
pub mod state;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tower_http::services::{ServeDir, ServeFile};

pub use error::ApiError;
pub use state::{AppState, LoadedBundle, ServiceConfig};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

/// Runs model fitting off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn list_bundles(State(state): State<Arc<AppState>>) -> Json<Vec<api::BundleInfo>> {
    Json(state.bundles())
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let reply = blocking(move || state.create_session(&body)).await?;
    Ok((StatusCode::CREATED, Json(reply)).into_response())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(blocking(move || state.view(&id)).await?).into_response())
}

async fn get_query(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(state.query(&id)?).into_response())
}

async fn respond(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::bad_request("malformed_header", "Idempotency-Key must be visible ASCII"))?
                .to_string(),
        ),
        None => None,
    };
    let (status, reply) = blocking(move || state.respond(&id, key.as_deref(), &body)).await?;
    Ok((status, Json(reply)).into_response())
}

async fn predictions(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(blocking(move || state.predictions(&id)).await?).into_response())
}

async fn checkpoint(
    State(state): State<Arc<AppState>>,
    Path((id, which)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    Ok(Json(state.checkpoint(&id, &which)?).into_response())
}

async fn not_found() -> ApiError {
    ApiError::not_found("not_found", "no such route")
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.static_dir.clone();
    let api = Router::new()
        .route("/bundles", get(list_bundles))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/query", get(get_query))
        .route("/sessions/{id}/respond", post(respond))
        .route("/sessions/{id}/predictions", get(predictions))
        .route("/sessions/{id}/checkpoints/{which}", get(checkpoint))
        .with_state(state);
    match static_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)))
        }
        None => api.fallback(not_found),
    }
}

/// Serves until ctrl-c, then writes every session record.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    let app = router(state.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    state.persist_all().map_err(std::io::Error::other)
}
