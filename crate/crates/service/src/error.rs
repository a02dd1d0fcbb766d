use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use iopscope_core::export::ExportError;
use iopscope_core::kb::KbError;
use iopscope_core::review::ReviewError;
use iopscope_core::scoring::ScoreError;
use serde::{Deserialize, Serialize};

/// Error body of every failed request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn invalid(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<KbError> for ApiError {
    fn from(e: KbError) -> Self {
        let code = match &e {
            KbError::UnknownNode(_) => "unknown_node",
            KbError::NotAProject(_) => "not_a_project",
            KbError::DegreeOutOfRange(_) => "degree_out_of_range",
            KbError::DegenerateWeights(_) => "degenerate_weights",
            KbError::ZeroDuration => "zero_duration",
            KbError::Invalid(_) => "validation_failed",
            KbError::Parse(_) | KbError::UnsupportedFormat(_) => "bad_document",
        };
        Self::invalid(code, e.to_string())
    }
}

impl From<ScoreError> for ApiError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Kb(inner) => inner.into(),
            other => Self::invalid("scoring_failed", other.to_string()),
        }
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::NoSuchItem(_) => Self::not_found(e.to_string()),
            ReviewError::AlreadyDecided { .. } => Self::new(StatusCode::CONFLICT, "already_decided", e.to_string()),
            ReviewError::MissingDelay(_) => Self::invalid("missing_delay", e.to_string()),
            ReviewError::UnknownComponent(_) => Self::invalid("unknown_component", e.to_string()),
            ReviewError::Kb(inner) => inner.into(),
            ReviewError::Table(_) => Self::internal(e.to_string()),
        }
    }
}

impl From<ExportError> for ApiError {
    fn from(e: ExportError) -> Self {
        if e.is_not_found() {
            Self::not_found(e.to_string())
        } else {
            Self::internal(e.to_string())
        }
    }
}
