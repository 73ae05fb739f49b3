//! HTTP handlers. They hold only the coordinator's command queue and its
//! snapshot receiver; every write goes through the queue.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use hpo_core::protocol::{ErrorBody, MetricsPayload, StopFlag};
use hpo_core::TrialId;
use tokio::sync::{mpsc, oneshot, watch};

use crate::coordinator::{Command, Rejection, Snapshot};

#[derive(Clone)]
pub(crate) struct AppState {
    pub(crate) commands: mpsc::Sender<Command>,
    pub(crate) snapshot: watch::Receiver<Arc<Snapshot>>,
}

const INDEX: &str = "<!doctype html>
<html>
<head><meta charset=\"utf-8\"><title>Optimization dashboard</title></head>
<body>
<h1>Optimization dashboard</h1>
<p>Results: <a href=\"/api/results\">/api/results</a></p>
</body>
</html>
";

pub(crate) fn router(state: AppState) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/api/results", get(results))
        .route("/api/trials/{id}", get(get_trial))
        .route("/api/trials/{id}/observations", axum::routing::post(post_observation))
        .route("/api/trials/{id}/stop", get(get_stop).post(post_stop))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

impl IntoResponse for Rejection {
    fn into_response(self) -> Response {
        match self {
            Rejection::NotFound => error(StatusCode::NOT_FOUND, "unknown trial"),
            Rejection::Gone => error(StatusCode::GONE, "trial is terminal"),
            Rejection::Conflict(m) => error(StatusCode::CONFLICT, m),
            Rejection::BadRequest(m) => error(StatusCode::BAD_REQUEST, m),
            Rejection::Unavailable => error(StatusCode::SERVICE_UNAVAILABLE, "optimization has finished"),
        }
    }
}

async fn ask<T>(state: &AppState, make: impl FnOnce(oneshot::Sender<Result<T, Rejection>>) -> Command) -> Result<T, Rejection> {
    let (tx, rx) = oneshot::channel();
    state.commands.send(make(tx)).await.map_err(|_| Rejection::Unavailable)?;
    rx.await.map_err(|_| Rejection::Unavailable)?
}

/// Trial ids in paths must be plain decimal integers.
fn parse_id(raw: &str) -> Result<TrialId, Response> {
    raw.parse().map_err(|_| error(StatusCode::NOT_FOUND, "unknown trial"))
}

async fn index() -> Html<&'static str> {
    Html(INDEX)
}

async fn results(State(state): State<AppState>) -> Response {
    let snapshot = state.snapshot.borrow().clone();
    ([(header::CONTENT_TYPE, "application/json")], snapshot.results.as_ref().clone()).into_response()
}

async fn get_trial(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let id = match parse_id(&id) {
        Ok(id) => id,
        Err(r) => return r,
    };
    match ask(&state, |reply| Command::FetchTrial { id, reply }).await {
        Ok(payload) => Json(payload).into_response(),
        Err(r) => r.into_response(),
    }
}

async fn post_observation(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    let id = match parse_id(&id) {
        Ok(id) => id,
        Err(r) => return r,
    };
    let metrics: MetricsPayload = match serde_json::from_slice(&body) {
        Ok(m) => m,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed metrics: {e}")),
    };
    match ask(&state, |reply| Command::Observe { id, metrics, reply }).await {
        Ok(()) => StatusCode::ACCEPTED.into_response(),
        Err(r) => r.into_response(),
    }
}

async fn get_stop(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let id = match parse_id(&id) {
        Ok(id) => id,
        Err(r) => return r,
    };
    let snapshot = state.snapshot.borrow().clone();
    if !snapshot.statuses.contains_key(&id) {
        return Rejection::NotFound.into_response();
    }
    Json(StopFlag { stop: snapshot.stop_requested.contains(&id) }).into_response()
}

async fn post_stop(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let id = match parse_id(&id) {
        Ok(id) => id,
        Err(r) => return r,
    };
    match ask(&state, |reply| Command::Stop { id, reply }).await {
        Ok(()) => StatusCode::ACCEPTED.into_response(),
        Err(r) => r.into_response(),
    }
}
