use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cfu_core::evaluation::EvalError;
use cfu_core::postproc::PostProcError;
use cfu_core::quant::ExportError;
use cfu_core::store::{EditError, InterchangeError, StoreError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Error body of every failed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status: status.as_u16(), code: code.into(), message: message.into(), details: None }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn schema(path: &str, message: impl Into<String>) -> Self {
        Self::unprocessable("schema", message).with_details(json!({ "path": path }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<InterchangeError> for ApiError {
    fn from(e: InterchangeError) -> Self {
        ApiError::schema(&e.path, e.to_string())
    }
}

impl From<PostProcError> for ApiError {
    fn from(e: PostProcError) -> Self {
        match e {
            PostProcError::MissingEllipse(id) => {
                ApiError::conflict("missing_ellipse", e.to_string()).with_details(json!({ "image_id": id }))
            }
            PostProcError::InvalidConfig { field, .. } => {
                ApiError::unprocessable("invalid_config", e.to_string()).with_details(json!({ "field": field }))
            }
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<EditError> for ApiError {
    fn from(e: EditError) -> Self {
        let msg = e.to_string();
        match e {
            EditError::UnknownImage(_) => ApiError::not_found("unknown_image", msg),
            EditError::UnknownInstance(_) => ApiError::not_found("unknown_instance", msg),
            EditError::DuplicateInstance(_) => ApiError::conflict("duplicate_instance", msg),
            EditError::NotUnsure(_) => ApiError::conflict("not_unsure", msg),
            EditError::AlreadyExcluded(_) => ApiError::conflict("already_excluded", msg),
            EditError::NotExcluded(_) => ApiError::conflict("not_excluded", msg),
            EditError::InvalidGeometry(_) => ApiError::unprocessable("invalid_geometry", msg),
            EditError::InvalidExperiment(_) => ApiError::unprocessable("invalid_experiment", msg),
            EditError::Pipeline(p) => p.into(),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::UnknownDataset(_) => ApiError::not_found("unknown_dataset", msg),
            StoreError::UnknownImage(_) => ApiError::not_found("unknown_image", msg),
            StoreError::Interchange(i) => i.into(),
            StoreError::Edit(e) => e.into(),
            StoreError::Pixels(_) => ApiError::unprocessable("invalid_pixels", msg),
            StoreError::Io { .. } | StoreError::Corrupt { .. } => {
                tracing::error!("{msg}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", msg)
            }
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        let msg = e.to_string();
        match e {
            EvalError::NoGroundTruth => ApiError::conflict("no_ground_truth", msg),
            EvalError::InvalidConfig(_) => ApiError::unprocessable("invalid_config", msg),
            EvalError::TooFewRaters(_) | EvalError::MismatchedImages { .. } => {
                ApiError::unprocessable("invalid_raters", msg)
            }
        }
    }
}

impl From<ExportError> for ApiError {
    fn from(e: ExportError) -> Self {
        let msg = e.to_string();
        match e {
            ExportError::Blocked(diags) => {
                ApiError::conflict("experiment_blocked", msg).with_details(json!({ "diagnostics": diags }))
            }
            ExportError::Quant(q) => ApiError::unprocessable("invalid_export", q.to_string()),
        }
    }
}
