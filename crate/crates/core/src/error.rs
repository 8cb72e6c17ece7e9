use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("mining error: anchor {anchor} has no valid {role} for {kind} triplets")]
    Mining {
        anchor: usize,
        role: &'static str,
        kind: crate::mining::TripletKind,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) => 3,
            Error::Protocol(_) => 4,
            Error::Numeric(_) => 5,
            Error::Mining { .. } | Error::Metric(_) | Error::InvalidState(_) => 3,
        }
    }
}
