use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use gsculpt_core::perception::PerceptionError;
use gsculpt_core::pipeline::SegmentError;
use gsculpt_core::scene::SceneError;
use gsculpt_core::toolbox::ToolboxError;
use serde::Serialize;
use serde_json::{json, Value};

/// Error body shared by routes and failed jobs: `{"error": {status, message, detail?}}`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(serialize_with = "as_u16")]
    pub status: StatusCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

fn as_u16<S: serde::Serializer>(s: &StatusCode, ser: S) -> Result<S::Ok, S::Error> {
    ser.serialize_u16(s.as_u16())
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            detail: None,
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn body(&self) -> Value {
        json!({ "error": self })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

impl From<SceneError> for ApiError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::SelectionMismatch { .. } | SceneError::EmptySelection | SceneError::SelectionOutOfRange { .. } => {
                Self::conflict(e.to_string())
            }
            _ => Self::unprocessable(e.to_string()),
        }
    }
}

impl From<PerceptionError> for ApiError {
    fn from(e: PerceptionError) -> Self {
        match e {
            PerceptionError::RemoteUnavailable(_) | PerceptionError::RemoteProtocol(_) => {
                Self::new(StatusCode::BAD_GATEWAY, e.to_string())
            }
            _ => Self::unprocessable(e.to_string()),
        }
    }
}

impl From<ToolboxError> for ApiError {
    fn from(e: ToolboxError) -> Self {
        match e {
            ToolboxError::Scene(s) => s.into(),
            ToolboxError::WouldEmptyScene => Self::conflict(e.to_string()),
            ToolboxError::EditorUnavailable(_) => Self::new(StatusCode::BAD_GATEWAY, e.to_string()),
            _ => Self::unprocessable(e.to_string()),
        }
    }
}

impl From<SegmentError> for ApiError {
    fn from(e: SegmentError) -> Self {
        match e {
            SegmentError::NoClicks => Self::conflict(e.to_string()),
            SegmentError::EmptySelection { ref report } => {
                let detail = serde_json::to_value(report).unwrap_or(Value::Null);
                // an empty result with remote failures is blamed on the remote models
                let status = if report.remote_failures().next().is_some() {
                    StatusCode::BAD_GATEWAY
                } else {
                    StatusCode::UNPROCESSABLE_ENTITY
                };
                Self::new(status, e.to_string()).with_detail(detail)
            }
            SegmentError::InvalidClick(s) => s.into(),
            _ => Self::unprocessable(e.to_string()),
        }
    }
}
