use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use pbo_core::PboError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no session with id `{0}`")]
    NotFound(String),
    #[error("no route for {0}")]
    NoRoute(String),
    #[error("{0}")]
    InvalidRequest(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("no duel is pending; request one from next-duel first")]
    NoPendingDuel,
    #[error("no outcomes recorded yet")]
    NoData,
    #[error("session is answered by a human, not a simulated oracle")]
    NotSimulated,
    #[error("corrupt event log: {0}")]
    CorruptLog(String),
    #[error("storage failure: {0}")]
    Storage(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] PboError),
}

pub type ServiceResult<T> = Result<T, ServiceError>;

/// Wire form of every error response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "session_not_found",
            ServiceError::NoRoute(_) => "not_found",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::Unsupported(_) => "unsupported",
            ServiceError::NoPendingDuel => "no_pending_duel",
            ServiceError::NoData => "no_data",
            ServiceError::NotSimulated => "not_simulated",
            ServiceError::CorruptLog(_) => "corrupt_log",
            ServiceError::Storage(_) => "storage_failure",
            ServiceError::Model(e) if is_input_error(e) => "invalid_request",
            ServiceError::Model(_) => "model_failure",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) | ServiceError::NoRoute(_) => StatusCode::NOT_FOUND,
            ServiceError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unsupported(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NoPendingDuel | ServiceError::NoData | ServiceError::NotSimulated => StatusCode::CONFLICT,
            ServiceError::Model(e) if is_input_error(e) => StatusCode::BAD_REQUEST,
            ServiceError::CorruptLog(_) | ServiceError::Storage(_) | ServiceError::Model(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
        }
    }
}

fn is_input_error(e: &PboError) -> bool {
    matches!(
        e,
        PboError::UnknownFunction(_)
            | PboError::UnknownPolicy(_)
            | PboError::InvalidDomain(_)
            | PboError::GridOverflow { .. }
            | PboError::InvalidLabel(_)
            | PboError::InvalidConfig(_)
    )
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            tracing::error!(code = self.code(), "{self}");
        }
        (self.status(), Json(self.body())).into_response()
    }
}
