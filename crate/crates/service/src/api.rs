//! HTTP routes.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::service::Service;

type Shared = State<Arc<Service>>;

fn parse_body(bytes: &Bytes) -> Result<Value, ApiError> {
    if bytes.is_empty() {
        return Ok(Value::Object(Default::default()));
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::validation(format!("malformed JSON: {e}"), Value::Null))
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn list(State(s): Shared) -> impl IntoResponse {
    Json(s.list())
}

async fn create(State(s): Shared, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let body = parse_body(&body)?;
    Ok((axum::http::StatusCode::CREATED, Json(s.create(&body).await?)))
}

async fn summary(State(s): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.summary(&id)?))
}

async fn suggest(State(s): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.suggest(&id).await?))
}

async fn observe(State(s): Shared, Path(id): Path<String>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let body = parse_body(&body)?;
    Ok(Json(s.observe(&id, &body).await?))
}

async fn close(State(s): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.close(&id).await?))
}

async fn trace(State(s): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.trace(&id)?))
}

async fn export(State(s): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let csv = s.export_csv(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/campaigns", get(list).post(create))
        .route("/campaigns/{id}", get(summary))
        .route("/campaigns/{id}/suggest", post(suggest))
        .route("/campaigns/{id}/observe", post(observe))
        .route("/campaigns/{id}/close", post(close))
        .route("/campaigns/{id}/trace", get(trace))
        .route("/campaigns/{id}/export.csv", get(export))
        .with_state(service)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, service: Arc<Service>) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}
