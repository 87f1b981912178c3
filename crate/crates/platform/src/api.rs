//! JSON HTTP API.

use std::sync::Arc;

use adhere_core::model::DateRange;
use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::service::{ArmRule, IntakeRequest, Registration, Service, ServiceError};

/// Header carrying the shared token when `ADHERE_TOKEN` is configured.
pub const TOKEN_HEADER: &str = "x-adhere-token";

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<Service>,
    pub token: Option<Arc<str>>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::DayClosed(_) => (StatusCode::CONFLICT, "day_closed"),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ServiceError::Validation(_) | ServiceError::Violations(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "validation")
            }
            ServiceError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let mut body = json!({ "error": kind, "message": self.to_string() });
        if let ServiceError::Violations(v) = &self {
            body["violations"] = json!(v);
        }
        (status, Json(body)).into_response()
    }
}

fn bad_request(message: String) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({ "error": "bad_request", "message": message })),
    )
        .into_response()
}

#[derive(Debug, Deserialize)]
struct WindowQuery {
    window: Option<String>,
    arms: Option<String>,
}

impl WindowQuery {
    fn window(&self) -> Result<Option<DateRange>, String> {
        self.window
            .as_deref()
            .map(|w| w.parse::<DateRange>().map_err(|e| format!("window: {e}")))
            .transpose()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/patients", post(register))
        .route("/patients/{id}/today", get(today))
        .route("/patients/{id}/intakes", post(intake))
        .route("/patients/{id}/game", get(game))
        .route("/patients/{id}/dashboard", get(dashboard))
        .route("/labs/import", post(import_labs))
        .route("/cohort/report", get(report))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, headers: HeaderMap, request: Request, next: Next) -> Response {
    if let Some(expected) = &state.token {
        let given = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_ref()) {
            return (
                StatusCode::UNAUTHORIZED,
                Json(json!({ "error": "unauthorized", "message": format!("missing or wrong {TOKEN_HEADER}") })),
            )
                .into_response();
        }
    }
    next.run(request).await
}

/// Runs a blocking service call off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    let service = state.service.clone();
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .expect("service call panicked")
}

async fn register(State(state): State<AppState>, Json(reg): Json<Registration>) -> Response {
    match blocking(&state, move |s| s.register(reg)).await {
        Ok(profile) => (StatusCode::CREATED, Json(profile)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn today(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    blocking(&state, move |s| s.today(&id)).await.map(Json).into_response()
}

async fn intake(State(state): State<AppState>, Path(id): Path<String>, Json(req): Json<IntakeRequest>) -> Response {
    blocking(&state, move |s| s.record_intake(&id, &req))
        .await
        .map(Json)
        .into_response()
}

async fn game(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    blocking(&state, move |s| s.game(&id)).await.map(Json).into_response()
}

async fn dashboard(State(state): State<AppState>, Path(id): Path<String>, Query(q): Query<WindowQuery>) -> Response {
    let window = match q.window() {
        Ok(w) => w,
        Err(e) => return bad_request(e),
    };
    blocking(&state, move |s| s.dashboard(&id, window))
        .await
        .map(Json)
        .into_response()
}

async fn import_labs(State(state): State<AppState>, body: Bytes) -> Response {
    blocking(&state, move |s| s.ingest_labs(body.as_ref()))
        .await
        .map(Json)
        .into_response()
}

async fn report(State(state): State<AppState>, Query(q): Query<WindowQuery>) -> Response {
    let window = match q.window() {
        Ok(w) => w.unwrap_or_else(DateRange::all),
        Err(e) => return bad_request(e),
    };
    let rule = match q.arms.as_deref().map(str::parse::<ArmRule>).transpose() {
        Ok(r) => r.unwrap_or_default(),
        Err(e) => return bad_request(e),
    };
    blocking(&state, move |s| Ok(s.cohort_report(window, rule)))
        .await
        .map(Json)
        .into_response()
}
