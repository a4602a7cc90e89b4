use thiserror::Error;

/// Errors raised by the learning, explanation and session machinery.
#[derive(Debug, Error)]
pub enum CaipiError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("the unlabeled pool is empty")]
    EmptyPool,

    #[error("generator exhausted after {draws} draws with {accepted} of {requested} examples accepted")]
    GeneratorExhausted {
        draws: usize,
        accepted: usize,
        requested: usize,
    },

    #[error("ill-conditioned basis (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("strategy {strategy} does not apply to {payload} payloads")]
    StrategyMismatch {
        strategy: &'static str,
        payload: &'static str,
    },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("stale feedback: session is at iteration {expected}, feedback targets {got}")]
    StaleIteration { expected: usize, got: usize },

    #[error("session finished; no further queries")]
    SessionFinished,

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {path}: {message}")]
    Malformed { path: String, message: String },
}

impl CaipiError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CaipiError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CaipiError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CaipiError>;
