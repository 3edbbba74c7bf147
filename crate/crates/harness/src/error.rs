use thiserror::Error;
use vhot_core::CoreError;
use vhot_numerics::NumericsError;

/// Failure classes of the harness; each maps to a process exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<NumericsError> for HarnessError {
    fn from(e: NumericsError) -> Self {
        Self::Core(CoreError::Numerics(e))
    }
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Numeric(_) | Self::Core(CoreError::NonFinite(_)) => 3,
            Self::Data(_) | Self::Core(_) | Self::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
