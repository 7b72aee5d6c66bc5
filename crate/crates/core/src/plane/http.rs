//! Operator HTTP API.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/devices` | all devices |
//! | GET | `/api/devices/{id}` | one device, incl. connection duration |
//! | GET | `/api/devices/{id}/samples?from=&to=` | stored samples, ascending by `t_ms` |
//! | POST | `/api/devices/{id}/commands` | `{"kind": .., "payload": .., "ttl_ms": ..}` |
//! | GET | `/api/devices/{id}/commands/{cmd_id}` | command status |
//! | GET | `/api/devices/{id}/live` | server-sent events: `sample` (a frame), then `close` |
//!
//! Every route needs an operator token, as `Authorization: Bearer <token>`
//! or a `token` query parameter (browsers cannot set headers on
//! `EventSource`).

use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::Deserialize;
use serde_json::json;

use crate::clock::Clock;
use crate::protocol::{encode_sample, CommandKind};

use super::{ControlPlane, LiveEvent, PlaneError};

pub type SharedPlane = Arc<Mutex<ControlPlane>>;

#[derive(Clone)]
pub struct ApiState {
    pub plane: SharedPlane,
    pub clock: Arc<dyn Clock>,
}

impl ApiState {
    fn lock(&self) -> MutexGuard<'_, ControlPlane> {
        self.plane.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(plane: SharedPlane, clock: Arc<dyn Clock>) -> Router {
    Router::new()
        .route("/api/devices", get(list_devices))
        .route("/api/devices/{id}", get(get_device))
        .route("/api/devices/{id}/samples", get(get_samples))
        .route("/api/devices/{id}/commands", post(post_command))
        .route("/api/devices/{id}/commands/{cmd_id}", get(get_command))
        .route("/api/devices/{id}/live", get(live))
        .with_state(ApiState { plane, clock })
}

impl IntoResponse for PlaneError {
    fn into_response(self) -> Response {
        let status = match &self {
            PlaneError::Unauthorized | PlaneError::SessionClosed => StatusCode::UNAUTHORIZED,
            PlaneError::NotFound(_) => StatusCode::NOT_FOUND,
            PlaneError::BadRequest(_) | PlaneError::Protocol(_) => StatusCode::BAD_REQUEST,
            PlaneError::Storage(_) | PlaneError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
struct AuthQuery {
    token: Option<String>,
}

fn bearer(headers: &HeaderMap, query: &AuthQuery) -> Result<String, PlaneError> {
    let from_header = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    from_header
        .map(str::to_string)
        .or_else(|| query.token.clone())
        .ok_or(PlaneError::Unauthorized)
}

fn authorize(state: &ApiState, headers: &HeaderMap, query: &AuthQuery) -> Result<String, PlaneError> {
    let token = bearer(headers, query)?;
    state.lock().authorize_operator(&token)?;
    Ok(token)
}

async fn list_devices(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Query(q): Query<AuthQuery>,
) -> Result<Response, PlaneError> {
    authorize(&state, &headers, &q)?;
    let now = state.clock.now_ms();
    Ok(Json(state.lock().devices(now)).into_response())
}

async fn get_device(
    State(state): State<ApiState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<AuthQuery>,
) -> Result<Response, PlaneError> {
    authorize(&state, &headers, &q)?;
    let now = state.clock.now_ms();
    Ok(Json(state.lock().device(&id, now)?).into_response())
}

#[derive(Debug, Deserialize)]
struct RangeQuery {
    from: Option<u64>,
    to: Option<u64>,
    token: Option<String>,
}

async fn get_samples(
    State(state): State<ApiState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<RangeQuery>,
) -> Result<Response, PlaneError> {
    authorize(&state, &headers, &AuthQuery { token: q.token })?;
    let samples = state
        .lock()
        .query_range(&id, q.from.unwrap_or(0), q.to.unwrap_or(u64::MAX))?;
    Ok(Json(samples).into_response())
}

#[derive(Debug, Deserialize)]
struct CommandRequest {
    #[serde(flatten)]
    kind: CommandKind,
    ttl_ms: Option<u64>,
}

async fn post_command(
    State(state): State<ApiState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<AuthQuery>,
    body: String,
) -> Result<Response, PlaneError> {
    let token = authorize(&state, &headers, &q)?;
    let req: CommandRequest =
        serde_json::from_str(&body).map_err(|e| PlaneError::BadRequest(e.to_string()))?;
    let now = state.clock.now_ms();
    let record = state
        .lock()
        .dispatch_command(&token, &id, req.kind, req.ttl_ms, now)?;
    Ok((StatusCode::ACCEPTED, Json(record)).into_response())
}

async fn get_command(
    State(state): State<ApiState>,
    Path((id, cmd_id)): Path<(String, String)>,
    headers: HeaderMap,
    Query(q): Query<AuthQuery>,
) -> Result<Response, PlaneError> {
    authorize(&state, &headers, &q)?;
    let now = state.clock.now_ms();
    Ok(Json(state.lock().command_status(&id, &cmd_id, now)?).into_response())
}

async fn live(
    State(state): State<ApiState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<AuthQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, PlaneError> {
    let token = bearer(&headers, &q)?;
    let sub = state.lock().subscribe_live(&token, &id)?;
    let events = stream::unfold(Some(sub), |sub| async move {
        let mut sub = sub?;
        let event = match sub.next().await {
            Some(LiveEvent::Sample(s)) => {
                let line = encode_sample(&s).unwrap_or_default();
                Event::default().event("sample").data(line.trim_end())
            }
            Some(LiveEvent::Closed(reason)) => {
                return Some((Ok(Event::default().event("close").data(reason)), None));
            }
            None => return None,
        };
        Some((Ok(event), Some(sub)))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
