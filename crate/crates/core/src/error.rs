use std::path::PathBuf;

/// Errors raised anywhere in the probing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot load model `{0}`: {1}")]
    Load(String, String),
    #[error("integrity check failed for {path}: expected {expected}, found {found}")]
    Integrity {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("token `{0}` is already in the vocabulary")]
    Conflict(String),
    #[error("invalid token `{0}`")]
    InvalidToken(String),
    #[error("position {index} out of range for sequence of length {len}")]
    Bounds { index: usize, len: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("token `{0}` is not registered")]
    MissingToken(String),
    #[error("only {found} candidates survive filtering, {needed} required")]
    InsufficientCandidates { found: usize, needed: usize },
    #[error("selection error: {0}")]
    Selection(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("loss diverged at epoch {epoch}: {value}")]
    Divergence { epoch: usize, value: f64 },
    #[error("metric error: {0}")]
    Metric(String),
    #[error("coverage error: no tuning-structure record for condition `{0}`")]
    Coverage(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("report error: {0}")]
    Report(String),
    #[error("tokenization invariance gate failed for {0} sentence(s)")]
    InvarianceGate(usize),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
