use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("ill-conditioned matrix (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("reference element is (near) zero")]
    DegenerateReference,

    #[error("least-squares coefficient is (near) zero; completed element unresolvable")]
    DegenerateAlpha,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed file: {0}")]
    FormatError(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl Error {
    /// Process exit status used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) | Error::Json(_) => 2,
            Error::NumericalFailure(_) | Error::IllConditioned { .. } | Error::DegenerateReference | Error::DegenerateAlpha => 3,
            Error::FormatError(_) | Error::Io(_) | Error::Wav(_) => 1,
        }
    }
}
