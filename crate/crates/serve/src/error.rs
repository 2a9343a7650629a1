use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use oasis_core::dan::DanError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServeError {
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("({lat}, {lon}) is outside the model region")]
    OutOfRegion { lat: f64, lon: f64 },
    #[error("no tide available for {timestamp}: {reason}")]
    TideUnavailable { timestamp: String, reason: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("model cannot be served: {0}")]
    UnsupportedModel(String),
    #[error("inference failed: {0}")]
    Inference(String),
    #[error("model swap is disabled (no admin token configured)")]
    SwapDisabled,
    #[error("missing or wrong admin token")]
    Unauthorized,
    #[error("i/o: {0}")]
    Io(String),
}

impl ServeError {
    /// Stable machine-readable code carried in error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ServeError::CorruptCheckpoint(_) => "corrupt_checkpoint",
            ServeError::VersionMismatch { .. } => "version_mismatch",
            ServeError::OutOfRegion { .. } => "out_of_region",
            ServeError::TideUnavailable { .. } => "tide_unavailable",
            ServeError::InvalidRequest(_) => "invalid_request",
            ServeError::MalformedHeader(_) => "malformed_header",
            ServeError::UnsupportedModel(_) => "unsupported_model",
            ServeError::Inference(_) => "inference_failed",
            ServeError::SwapDisabled => "swap_disabled",
            ServeError::Unauthorized => "unauthorized",
            ServeError::Io(_) => "io_error",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServeError::OutOfRegion { .. } | ServeError::InvalidRequest(_) | ServeError::MalformedHeader(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServeError::TideUnavailable { .. } => StatusCode::SERVICE_UNAVAILABLE,
            ServeError::CorruptCheckpoint(_) | ServeError::VersionMismatch { .. } | ServeError::UnsupportedModel(_) => {
                StatusCode::BAD_REQUEST
            }
            ServeError::SwapDisabled => StatusCode::FORBIDDEN,
            ServeError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServeError::Inference(_) | ServeError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
        }
    }
}

impl From<DanError> for ServeError {
    fn from(e: DanError) -> Self {
        match e {
            DanError::CorruptCheckpoint(m) => ServeError::CorruptCheckpoint(m),
            DanError::VersionMismatch { expected, found } => ServeError::VersionMismatch { expected, found },
            DanError::Io(e) => ServeError::Io(e.to_string()),
            other => ServeError::Inference(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Serialize)]
struct Envelope {
    error: ErrorBody,
}

impl IntoResponse for ServeError {
    fn into_response(self) -> Response {
        (self.status(), Json(Envelope { error: self.body() })).into_response()
    }
}
