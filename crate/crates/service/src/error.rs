use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use divrec_core::engine::EngineError;
use divrec_core::rerank::RerankError;
use serde_json::json;
use thiserror::Error;

use crate::state::SessionLookup;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("unknown session token")]
    UnknownToken,
    #[error("session expired")]
    Expired,
    #[error("{0}")]
    Forbidden(&'static str),
    #[error("{0}")]
    NotFound(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::UnknownToken | ApiError::Expired => StatusCode::UNAUTHORIZED,
            ApiError::Forbidden(_) => StatusCode::FORBIDDEN,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<SessionLookup> for ApiError {
    fn from(l: SessionLookup) -> Self {
        match l {
            SessionLookup::Unknown => ApiError::UnknownToken,
            SessionLookup::Expired => ApiError::Expired,
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Rerank(
                r @ (RerankError::PageOutOfRange(_) | RerankError::InvalidLevel(_)),
            ) => ApiError::BadRequest(r.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::Internal(format!("event log: {e}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Internal(msg) = &self {
            tracing::error!("{msg}");
        }
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}
