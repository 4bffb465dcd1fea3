use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate token: vector norm {0:e} is below the encoding threshold")]
    DegenerateToken(f64),

    #[error("cache miss: {0}")]
    CacheMiss(String),

    #[error("context overflow: sequence of length {len} exceeds context {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("vocab error: character {0:?} is not in the vocabulary")]
    Vocab(char),

    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error on {path}: {source}{hint}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
        hint: String,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("version mismatch: {0}")]
    Version(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
            hint: String::new(),
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
