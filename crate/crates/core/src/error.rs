use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not an MRT1 file")]
    BadMagic,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("ensemble member {member} diverged at epoch {epoch}")]
    MemberDiverged { member: usize, epoch: usize },
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),
    #[error("low-resolution KL numerically zero; ratio undefined")]
    RatioUndefined,
    #[error("hessian guard: input dimension {0} exceeds 64")]
    HessianGuard(usize),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidArgument(_) | Error::Shape(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
