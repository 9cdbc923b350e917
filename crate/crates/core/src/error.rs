use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is not valid UTF-8")]
    NotUtf8(PathBuf),
    #[error("empty body")]
    EmptyBody,
    #[error("no sentences found")]
    NoSentences,
    #[error("malformed document record at line {line}: {reason}")]
    MalformedDocument { line: usize, reason: String },

    #[error("invalid model id {0:?}: must be 1-32 bytes without whitespace")]
    InvalidModelId(String),
    #[error("invalid provider config: {0}")]
    InvalidProvider(String),
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row count mismatch: expected {expected}, got {got}")]
    RowCountMismatch { expected: usize, got: usize },
    #[error("zero vector at row {0}")]
    ZeroVector(usize),
    #[error("non-finite value at row {0}")]
    NonFinite(usize),

    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated payload")]
    Truncated,
    #[error("checksum mismatch")]
    ChecksumMismatch,
    #[error("unexpected trailing bytes")]
    TrailingBytes,
    #[error("unexpected container kind: {0}")]
    WrongKind(String),
    #[error("field too long for container: {0}")]
    FieldTooLong(String),

    #[error("zero-norm input")]
    ZeroNorm,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("matrix too small: need n >= {need}, got {got}")]
    TooSmall { need: usize, got: usize },
    #[error("degenerate sigma")]
    DegenerateSigma,

    #[error("zero variance")]
    ZeroVariance,
    #[error("need at least {need} models, got {got}")]
    TooFewModels { need: usize, got: usize },
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty matrix")]
    EmptyMatrix,
    #[error("invalid render spec: {0}")]
    InvalidRenderSpec(String),

    #[error("invalid config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn read(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Read {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Write {
            path: path.into(),
            source,
        }
    }
}
