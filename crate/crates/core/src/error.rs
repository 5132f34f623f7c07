use thiserror::Error;

/// Error type shared across the crate. The three variants map onto the
/// CLI exit codes: config 1, data 2, numerical 3.
#[derive(Debug, Error)]
pub enum SrqaError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl SrqaError {
    pub fn config(msg: impl Into<String>) -> Self {
        SrqaError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        SrqaError::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        SrqaError::Numerical(msg.into())
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            SrqaError::Config(_) => 1,
            SrqaError::Data(_) => 2,
            SrqaError::Numerical(_) => 3,
        }
    }
}

impl From<std::io::Error> for SrqaError {
    fn from(e: std::io::Error) -> Self {
        SrqaError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SrqaError>;
