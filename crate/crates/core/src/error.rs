use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid {param}: {reason}")]
    Precondition { param: String, reason: String },

    /// Block geometry that cannot be executed on the given image size.
    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: u64, reason: String },

    #[error("incomplete grid: missing {0}")]
    IncompleteGrid(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse grouping used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn precondition(param: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Precondition {
            param: param.into(),
            reason: reason.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Precondition { .. }
            | Error::Infeasible(_)
            | Error::IncompleteGrid(_)
            | Error::CheckpointMismatch(_) => ErrorClass::Usage,
            Error::Singular(_) | Error::Domain(_) => ErrorClass::Numerical,
            Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) => {
                ErrorClass::Data
            }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
