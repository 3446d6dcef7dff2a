//! JSON error bodies: `{code, message, detail}`.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use lgbo_core::engine::EngineError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>, detail: Value) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_owned(),
                message: message.into(),
                detail,
            },
        }
    }

    pub fn validation(message: impl Into<String>, detail: Value) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message, detail)
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no campaign {id}"), json!({ "id": id }))
    }

    pub fn conflict(message: impl Into<String>, detail: Value) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message, detail)
    }

    pub fn closed(id: &str) -> Self {
        Self::new(StatusCode::CONFLICT, "closed", format!("campaign {id} is closed"), json!({ "id": id }))
    }

    pub fn unrecoverable(id: &str, reason: &str) -> Self {
        Self::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "unrecoverable",
            format!("campaign {id} could not be restored from its log"),
            json!({ "id": id, "reason": reason }),
        )
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), Value::Null)
    }

    pub fn engine(e: EngineError) -> Self {
        match e {
            EngineError::Complete(n) => Self::new(
                StatusCode::CONFLICT,
                "closed",
                format!("budget exhausted after {n} rounds"),
                json!({ "rounds": n }),
            ),
            EngineError::Config(_) | EngineError::Provider(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "engine_config", e.to_string(), Value::Null)
            }
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "engine", other.to_string(), Value::Null),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
