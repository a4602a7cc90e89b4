use caipi_core::CaipiError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CaipiError),

    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt session store {path}: {message}")]
    CorruptStore { path: String, message: String },

    #[error("service error: {0}")]
    Service(String),
}

impl CliError {
    pub fn write(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Write {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(CaipiError::Config { .. } | CaipiError::Io { .. }) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
