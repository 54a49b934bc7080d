use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use hyperlens_core::error::Error as CoreError;

/// Error body: a stable machine-readable code plus a message.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

pub type ApiResult<T> = Result<T, ApiError>;

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid", message)
    }

    pub fn bounds(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bounds", message)
    }

    pub fn budget(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "budget", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn stale(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "stale", message)
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "session",
            format!("unknown session {id:?}"),
        )
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            CoreError::Index(_) => (S::BAD_REQUEST, "bounds"),
            CoreError::Domain(_) | CoreError::Dimension(_) | CoreError::Parse(_) => {
                (S::BAD_REQUEST, "invalid")
            }
            CoreError::Numeric { .. } => (S::UNPROCESSABLE_ENTITY, "numeric"),
            CoreError::State(_) => (S::CONFLICT, "state"),
            CoreError::Structure(_) => (S::UNPROCESSABLE_ENTITY, "structure"),
            CoreError::Name(_) => (S::UNPROCESSABLE_ENTITY, "name"),
            CoreError::Lookup { .. } => (S::NOT_FOUND, "lookup"),
            CoreError::UnusableOntology => (S::UNPROCESSABLE_ENTITY, "ontology"),
            CoreError::Incompatible(_) => (S::CONFLICT, "incompatible"),
            CoreError::Divergence { .. } => (S::CONFLICT, "divergence"),
            CoreError::Availability(_) => (S::SERVICE_UNAVAILABLE, "unavailable"),
            CoreError::Io(_) | CoreError::Json(_) => (S::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}
