use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use shapeflow_core::gan::GanError;
use shapeflow_core::grammar::{GrammarError, GrammarViolation};
use shapeflow_core::pipeline::PipelineError;
use shapeflow_core::session::SessionError;
use shapeflow_core::transformer::TransformerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    GrammarViolation,
    ModelMissing,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::GrammarViolation => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::ModelMissing => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Body of every error response: `{"error": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    /// Present for `grammar_violation`; carries the constraint id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<Box<GrammarViolation>>,
    /// Validation issues, when a grammar failed to load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issues: Option<Vec<shapeflow_core::grammar::ValidationIssue>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ApiError,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            violation: None,
            issues: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn model_missing(which: &str) -> Self {
        Self::new(
            ErrorCode::ModelMissing,
            format!("no {which} model is loaded; train one first"),
        )
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }

    pub fn violation(v: GrammarViolation) -> Self {
        Self {
            code: ErrorCode::GrammarViolation,
            message: v.to_string(),
            violation: Some(Box::new(v)),
            issues: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(ErrorEnvelope { error: self })).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        use SessionError::*;
        match e {
            UnknownTask(_) | UnknownBranch(_) | UnknownGrammar(_) => ApiError::not_found(e.to_string()),
            GrammarIssues(issues) => Self {
                issues: Some(issues),
                ..ApiError::bad_request("grammar has validation issues")
            },
            InvalidGrammar(g) => g.into(),
            Io(_) | Corrupt(_) => ApiError::internal(e.to_string()),
            _ => ApiError::bad_request(e.to_string()),
        }
    }
}

impl From<GrammarError> for ApiError {
    fn from(e: GrammarError) -> Self {
        match e {
            GrammarError::Semantic { issues } => Self {
                issues: Some(issues),
                ..ApiError::bad_request("grammar has validation issues")
            },
            other => ApiError::bad_request(other.to_string()),
        }
    }
}

impl From<TransformerError> for ApiError {
    fn from(e: TransformerError) -> Self {
        match e {
            TransformerError::InvalidPrefix(v) => ApiError::violation(v),
            TransformerError::Nn(_) => ApiError::internal(e.to_string()),
            other => ApiError::bad_request(other.to_string()),
        }
    }
}

impl From<GanError> for ApiError {
    fn from(e: GanError) -> Self {
        match e {
            GanError::Nn(_) => ApiError::internal(e.to_string()),
            other => ApiError::bad_request(other.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Gan(g) => g.into(),
            PipelineError::Completer(t) => t.into(),
            PipelineError::Invalid(m) => ApiError::bad_request(m),
            other => ApiError::internal(other.to_string()),
        }
    }
}
