//! CLI error taxonomy mapped onto exit codes: usage/config problems exit 2,
//! runtime failures exit 1.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KitError>;

#[derive(Debug, Error)]
pub enum KitError {
    /// Bad configuration or arguments; nothing was run.
    #[error("{0}")]
    Usage(String),

    /// A pipeline stage failed.
    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Core(#[from] sare_core::Error),
}

impl KitError {
    pub fn usage(msg: impl Into<String>) -> Self {
        KitError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        KitError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            KitError::Usage(_) => 2,
            KitError::Runtime(_) => 1,
            KitError::Core(e) => match e {
                sare_core::Error::InvalidArgument(_) => 2,
                _ => 1,
            },
        }
    }
}
