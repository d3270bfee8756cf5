use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed WAV data: {0}")]
    Format(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("degenerate filterbank: mel filter {filter} covers no FFT bin")]
    DegenerateFilterbank { filter: usize },
    #[error("empty result: {0}")]
    EmptyResult(String),
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },
    #[error("invalid state: {0}")]
    State(String),
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("incompatible weights at `{layer}`: {reason}")]
    IncompatibleWeights { layer: String, reason: String },
    #[error("cannot balance classes: {0}")]
    CannotBalance(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cosine distance undefined for a zero-norm vector")]
    UndefinedDistance,
    #[error("incompatible profile database: {0}")]
    IncompatibleDb(String),
    #[error("profile database has no references")]
    NoReferences,
    #[error("degenerate trials: {0}")]
    DegenerateTrials(String),
    #[error("missing embedding for track {0}")]
    MissingEmbedding(String),
    #[error("not computable: {0}")]
    NotComputable(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Debug,
        actual: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
