use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use iterbank::agreement::AgreementError;
use iterbank::project::ProjectError;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Body of every non-success response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
    #[serde(skip)]
    pub status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            code: code.to_string(),
            message: message.into(),
            details: None,
            status: status.as_u16(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        use ProjectError::*;
        let (status, code) = match &e {
            NotAProject(_) => (StatusCode::NOT_FOUND, "not_a_project"),
            NoSuchBatch(_) => (StatusCode::NOT_FOUND, "no_such_batch"),
            NoSuchSentence(_) => (StatusCode::NOT_FOUND, "no_such_sentence"),
            NoSuchToken { .. } => (StatusCode::NOT_FOUND, "no_such_token"),
            InvalidEdit(_) => (StatusCode::BAD_REQUEST, "invalid_edit"),
            Selection(_) => (StatusCode::BAD_REQUEST, "invalid_selection"),
            WrongState { .. } => (StatusCode::CONFLICT, "wrong_state"),
            BatchInProgress(_) => (StatusCode::CONFLICT, "batch_in_progress"),
            PoolExhausted => (StatusCode::CONFLICT, "pool_exhausted"),
            InvalidBatch { .. } => (StatusCode::CONFLICT, "invalid_batch"),
            NotLatestModel { .. } => (StatusCode::CONFLICT, "not_latest_model"),
            Predict(_) | Parser(_) | Adapter(_) => (StatusCode::BAD_GATEWAY, "backend_failed"),
            FinetuneFailed { .. } => (StatusCode::BAD_GATEWAY, "finetune_failed"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let mut api = ApiError::new(status, code, e.to_string());
        if let InvalidBatch { violations, .. } = &e {
            api.details = Some(serde_json::json!({ "violations": violations }));
        }
        api
    }
}

impl From<AgreementError> for ApiError {
    fn from(e: AgreementError) -> Self {
        let status = match e {
            AgreementError::Io { .. } => StatusCode::NOT_FOUND,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, "agreement", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}
