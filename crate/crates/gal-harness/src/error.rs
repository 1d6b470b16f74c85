//! Harness errors, mapped onto process exit codes:
//! 0 ok, 2 usage, 3 config, 4 runtime.

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("corrupted parameter file: {0}")]
    Corrupted(String),
    #[error("incompatible parameter file: {0}")]
    Incompatible(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            HarnessError::Config(_) | HarnessError::Corrupted(_) | HarnessError::Incompatible(_) => 3,
            HarnessError::Runtime(_) => 4,
        }
    }
}

impl From<gal_core::Error> for HarnessError {
    fn from(err: gal_core::Error) -> Self {
        HarnessError::Config(err.to_string())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(err: std::io::Error) -> Self {
        HarnessError::Runtime(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
