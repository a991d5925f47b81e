use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use crate::payload::{schema, ErrorBody, Versioned};

/// Error codes on the wire. Clients branch on `code`, never on `message`.
pub mod code {
    pub const LIBRARY_NOT_FOUND: &str = "library_not_found";
    pub const SESSION_NOT_FOUND: &str = "session_not_found";
    pub const UNEXPECTED_FEATURE: &str = "unexpected_feature";
    pub const NON_FINITE_VALUE: &str = "non_finite_value";
    pub const SESSION_TERMINATED: &str = "session_terminated";
    /// Another observation for the same session is being processed; retry.
    pub const SESSION_BUSY: &str = "session_busy";
    pub const INVALID_REQUEST: &str = "invalid_request";
    pub const INTERNAL: &str = "internal";
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>, detail: serde_json::Value) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                detail,
            },
        }
    }

    pub fn library_not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            code::LIBRARY_NOT_FOUND,
            format!("no library with id {id:?}"),
            json!({ "library_id": id }),
        )
    }

    pub fn session_not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            code::SESSION_NOT_FOUND,
            format!("no session with id {id:?}"),
            json!({ "session_id": id }),
        )
    }

    pub fn unexpected_feature(expected: usize, got: usize, names: &[String]) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            code::UNEXPECTED_FEATURE,
            format!("session is waiting for feature {expected}, got {got}"),
            json!({
                "expected": expected,
                "expected_name": names.get(expected),
                "received": got,
            }),
        )
    }

    pub fn non_finite(feature: usize, value: f64) -> Self {
        Self::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            code::NON_FINITE_VALUE,
            format!("value for feature {feature} is not finite"),
            json!({ "feature": feature, "value": value.to_string() }),
        )
    }

    pub fn session_terminated(id: &str) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            code::SESSION_TERMINATED,
            "session is terminated",
            json!({ "session_id": id }),
        )
    }

    pub fn session_busy(id: &str) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            code::SESSION_BUSY,
            "another observation for this session is in progress, retry",
            json!({ "session_id": id, "retry": true }),
        )
    }

    pub fn invalid_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code::INVALID_REQUEST, message, serde_json::Value::Null)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            code::INTERNAL,
            message,
            serde_json::Value::Null,
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(Versioned::new(schema::ERROR, self.body))).into_response()
    }
}
