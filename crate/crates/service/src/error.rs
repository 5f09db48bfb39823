use axum::http::StatusCode;

/// Every failure the API reports, with a stable machine-readable code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    InvalidRequest(String),
    #[error("path `{0}` must be relative to the data root and stay inside it")]
    InvalidPath(String),
    #[error("case `{0}` not found")]
    CaseNotFound(String),
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("frame directory `{0}` not found or empty")]
    FramesNotFound(String),
    #[error("invalid frames: {0}")]
    InvalidFrames(String),
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error("unknown landmark `{0}`")]
    UnknownLandmark(String),
    #[error("`{0}` is held out as a test landmark and cannot be picked")]
    ReservedTestLandmark(String),
    #[error("pick ({u}, {v}) outside the {width}x{height} frame")]
    PickOutOfBounds { u: f64, v: f64, width: usize, height: usize },
    #[error("no pick for `{0}`")]
    PickNotFound(String),
    #[error("registration needs 6 picks, have {0}")]
    InsufficientPicks(usize),
    #[error("{0}")]
    Degenerate(String),
    #[error("session is not registered")]
    NotRegistered,
    #[error("frame {n} out of range (sequence has {count} frames)")]
    FrameOutOfRange { n: usize, count: usize },
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::InvalidPath(_) => "invalid_path",
            ServiceError::CaseNotFound(_) => "case_not_found",
            ServiceError::InvalidCase(_) => "invalid_case",
            ServiceError::FramesNotFound(_) => "frames_not_found",
            ServiceError::InvalidFrames(_) => "invalid_frames",
            ServiceError::SessionNotFound(_) => "session_not_found",
            ServiceError::UnknownLandmark(_) => "unknown_landmark",
            ServiceError::ReservedTestLandmark(_) => "reserved_test_landmark",
            ServiceError::PickOutOfBounds { .. } => "pick_out_of_bounds",
            ServiceError::PickNotFound(_) => "pick_not_found",
            ServiceError::InsufficientPicks(_) => "insufficient_picks",
            ServiceError::Degenerate(_) => "degenerate_configuration",
            ServiceError::NotRegistered => "not_registered",
            ServiceError::FrameOutOfRange { .. } => "frame_out_of_range",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::InvalidRequest(_)
            | ServiceError::InvalidPath(_)
            | ServiceError::UnknownLandmark(_)
            | ServiceError::ReservedTestLandmark(_)
            | ServiceError::PickOutOfBounds { .. } => StatusCode::BAD_REQUEST,
            ServiceError::CaseNotFound(_)
            | ServiceError::FramesNotFound(_)
            | ServiceError::SessionNotFound(_)
            | ServiceError::PickNotFound(_)
            | ServiceError::FrameOutOfRange { .. } => StatusCode::NOT_FOUND,
            ServiceError::InsufficientPicks(_) | ServiceError::NotRegistered => StatusCode::CONFLICT,
            ServiceError::InvalidCase(_) | ServiceError::InvalidFrames(_) | ServiceError::Degenerate(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}
