use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] maskforge::Error),
    #[error("config {path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error("{0} is not an initialized workspace (run `maskforge init` first)")]
    NotInitialized(PathBuf),
    #[error("no prepared knowledge for set {0:?}")]
    SetNotPrepared(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl ServiceError {
    /// Process exit status for the command line: 2 for bad input data, 3
    /// for everything else.
    pub fn exit_code(&self) -> i32 {
        use maskforge::Error as E;
        match self {
            ServiceError::Internal(_) => 3,
            ServiceError::Core(
                E::NoCodesPresent
                | E::IndexOutOfRange { .. }
                | E::InactiveRegion(_)
                | E::AlreadyDivided(_)
                | E::SessionSealed,
            ) => 3,
            _ => 2,
        }
    }
}
