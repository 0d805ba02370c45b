//! HTTP routes.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::error::{ServiceError, ServiceResult};
use crate::session::{DuelView, PublicState, SessionSpec, WinnerView};
use crate::store::SessionStore;

/// Most simulated duels one request may ask for.
pub const MAX_SIMULATE_STEPS: usize = 500;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRequest {
    pub y: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeResponse {
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRequest {
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionList {
    pub ids: Vec<String>,
}

type AppState = Arc<SessionStore>;

fn body<T>(json: Result<Json<T>, JsonRejection>) -> ServiceResult<T> {
    json.map(|Json(v)| v).map_err(|e| ServiceError::InvalidRequest(e.body_text()))
}

async fn create(
    State(store): State<AppState>,
    spec: Result<Json<SessionSpec>, JsonRejection>,
) -> ServiceResult<(StatusCode, Json<Created>)> {
    let spec = body(spec)?;
    let id = tokio::task::spawn_blocking(move || store.create(spec))
        .await
        .map_err(|e| ServiceError::Storage(std::io::Error::other(e)))??;
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn list(State(store): State<AppState>) -> Json<SessionList> {
    Json(SessionList { ids: store.ids() })
}

async fn state(State(store): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<PublicState>> {
    store.with_session(&id, |e| Ok(e.state())).await.map(Json)
}

async fn next_duel(State(store): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<DuelView>> {
    store.with_session(&id, |e| e.next_duel()).await.map(Json)
}

async fn outcome(
    State(store): State<AppState>,
    Path(id): Path<String>,
    req: Result<Json<OutcomeRequest>, JsonRejection>,
) -> ServiceResult<Json<SizeResponse>> {
    let y = body(req)?.y;
    let size = store.with_session(&id, move |e| e.record_outcome(y)).await?;
    Ok(Json(SizeResponse { size }))
}

async fn winner(State(store): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<WinnerView>> {
    store.with_session(&id, |e| e.winner()).await.map(Json)
}

async fn simulate(
    State(store): State<AppState>,
    Path(id): Path<String>,
    req: Result<Json<SimulateRequest>, JsonRejection>,
) -> ServiceResult<Json<SizeResponse>> {
    let steps = body(req)?.steps;
    if steps > MAX_SIMULATE_STEPS {
        return Err(ServiceError::InvalidRequest(format!(
            "at most {MAX_SIMULATE_STEPS} steps per request, got {steps}"
        )));
    }
    let size = store.with_session(&id, move |e| e.simulate(steps)).await?;
    Ok(Json(SizeResponse { size }))
}

async fn not_found(uri: axum::http::Uri) -> ServiceError {
    ServiceError::NoRoute(uri.path().to_string())
}

/// The full API. Static UI assets are served from `ui_dir` under `/ui/`
/// when one is given.
pub fn router(store: Arc<SessionStore>, ui_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(state))
        .route("/sessions/{id}/next-duel", get(next_duel))
        .route("/sessions/{id}/outcome", post(outcome))
        .route("/sessions/{id}/winner", get(winner))
        .route("/sessions/{id}/simulate", post(simulate));
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app.fallback(not_found).with_state(store)
}
