use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("measurement graph is not connected")]
    Disconnected,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("sdp solver: {0}")]
    Solver(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<rotavg_sdp::SdpError> for Error {
    fn from(e: rotavg_sdp::SdpError) -> Self {
        Error::Solver(e.to_string())
    }
}
