use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use emcoder_client::api::{codes, ErrorBody};
use emcoder_core::audit::AuditRecord;
use emcoder_core::pipeline::{PipelineError, PipelineErrorKind};

/// Per-request id, assigned by middleware and echoed in `x-request-id`.
#[derive(Debug, Clone)]
pub struct RequestId(pub String);

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub audit: Vec<AuditRecord>,
    pub request_id: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>, rid: &RequestId) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            audit: Vec::new(),
            request_id: rid.0.clone(),
        }
    }

    pub fn bad_request(message: impl Into<String>, rid: &RequestId) -> Self {
        Self::new(StatusCode::BAD_REQUEST, codes::INVALID_REQUEST, message, rid)
    }

    pub fn not_found(message: impl Into<String>, rid: &RequestId) -> Self {
        Self::new(StatusCode::NOT_FOUND, codes::NOT_FOUND, message, rid)
    }

    /// Details go to the log, not the client.
    pub fn internal(detail: impl std::fmt::Display, rid: &RequestId) -> Self {
        tracing::error!(request_id = %rid.0, "{detail}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, codes::INTERNAL, "internal error", rid)
    }

    pub fn from_pipeline(err: PipelineError, rid: &RequestId) -> Self {
        let (status, code) = match &err.kind {
            PipelineErrorKind::CodeSelection(_) => (StatusCode::UNPROCESSABLE_ENTITY, codes::UNCODEABLE_ENCOUNTER),
            _ if err.is_provider_failure() => (StatusCode::BAD_GATEWAY, codes::PROVIDER_FAILURE),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, codes::INTERNAL),
        };
        tracing::warn!(request_id = %rid.0, "coding failed: {err}");
        Self {
            status,
            code,
            message: err.to_string(),
            audit: err.audit,
            request_id: rid.0.clone(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error_code: self.code.to_string(),
            message: self.message,
            request_id: self.request_id,
            audit: self.audit,
        };
        (self.status, Json(body)).into_response()
    }
}
