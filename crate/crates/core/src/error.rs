use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {format} data: {message}")]
    Format { format: &'static str, message: String },

    #[error("unknown required property `{0}`")]
    MissingProperty(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Completion(#[from] CompletionError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures raised by completion backends.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompletionError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("backend timed out")]
    Timeout,

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("contract violation: known-region error {max_error:.6} exceeds tolerance {tolerance:.6}")]
    ContractViolation { max_error: f64, tolerance: f64 },

    #[error("contract violation: {pixels} covered pixels fell outside the completed foreground")]
    ForegroundShrank { pixels: usize },

    #[error("contract violation: depth {value} at pixel index {index} is not positive and finite")]
    InvalidDepth { index: usize, value: f64 },

    #[error("backend error {status} ({code}): {message}")]
    Backend {
        status: u16,
        code: String,
        message: String,
    },

    #[error("invalid request: {0}")]
    InvalidRequest(String),
}
