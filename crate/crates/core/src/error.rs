use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid tau function: {0}")]
    InvalidTau(String),

    #[error("unsupported medium: {0}")]
    UnsupportedMedium(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stability condition violated: {0}")]
    Stability(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("cache mismatch: {0}")]
    CacheMismatch(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidGeometry(_)
            | Error::InvalidTau(_)
            | Error::UnsupportedMedium(_)
            | Error::Config(_) => 2,
            Error::Stability(_) | Error::Numerical(_) | Error::Dimension(_) => 3,
            Error::CacheMismatch(_) | Error::Format(_) => 4,
            Error::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
