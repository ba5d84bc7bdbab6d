use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error(transparent)]
    Engine(#[from] dualtrack_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        use dualtrack_core::Error as E;
        match self {
            ApiError::Engine(e) => match e {
                // Only raised by open_session for an unknown persona.
                E::Config(_) => StatusCode::UNPROCESSABLE_ENTITY,
                E::SessionNotFound(_) => StatusCode::NOT_FOUND,
                E::SessionClosed(_) => StatusCode::CONFLICT,
                E::InvalidTurn(_) | E::InvalidInput(_) | E::SchemaViolation { .. } => StatusCode::BAD_REQUEST,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ApiError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!("{self}");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;
