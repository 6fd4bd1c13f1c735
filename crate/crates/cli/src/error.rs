use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] protext::Error),

    #[error("{0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use protext::Error as E;
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                E::NonFinite(_) => EXIT_NUMERIC,
                E::Io { .. } | E::Llm(_) => EXIT_IO,
                E::Shape(_)
                | E::Invalid(_)
                | E::Capacity(_)
                | E::FingerprintMismatch { .. }
                | E::Record { .. }
                | E::Json(_) => EXIT_VALIDATION,
            },
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(protext::Error::Json(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;
