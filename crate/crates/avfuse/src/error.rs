use std::io;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Core(#[from] avfuse_core::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn io(path: &std::path::Path, source: io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }

    /// Process exit status: 1 for bad input or usage, 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(avfuse_core::Error::NumericFailure(_)) => 2,
            Error::Io { source, .. } => match source.kind() {
                io::ErrorKind::NotFound
                | io::ErrorKind::PermissionDenied
                | io::ErrorKind::AlreadyExists
                | io::ErrorKind::InvalidInput
                | io::ErrorKind::InvalidData
                | io::ErrorKind::UnexpectedEof => 1,
                _ => 2,
            },
            _ => 1,
        }
    }
}
