use thiserror::Error;

pub type Result<T> = std::result::Result<T, AppError>;

/// Failures of the entry points. Each variant has one HTTP status and one
/// CLI exit code.
#[derive(Debug, Error)]
pub enum AppError {
    /// A request field or flag is malformed or out of its domain.
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },

    #[error("not found: {0}")]
    NotFound(String),

    /// The job exists but has no result yet.
    #[error("job {job_id} is {status}")]
    NotReady { job_id: String, status: String },

    #[error("job {job_id} failed: {message}")]
    JobFailed { job_id: String, message: String },

    #[error(transparent)]
    Compute(bfsurf::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl AppError {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        AppError::Invalid {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        AppError::Io {
            context: context.into(),
            source,
        }
    }

    /// The request field at fault, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            AppError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }

    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Invalid { .. } => 2,
            _ => 1,
        }
    }
}

impl From<bfsurf::Error> for AppError {
    fn from(e: bfsurf::Error) -> Self {
        match e {
            bfsurf::Error::InvalidParameter { field, reason } => AppError::Invalid {
                field,
                message: reason,
            },
            other => AppError::Compute(other),
        }
    }
}
