use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("io error: {0}")]
    Stream(#[from] std::io::Error),
    #[error("bad magic: expected \"OODT\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dtype code {0}")]
    UnknownDType(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("{0} bytes after the tensor payload")]
    TrailingBytes(u64),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid pack: {0}")]
    InvalidPack(String),
    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing header")]
    MissingHeader,
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("cannot parse `{value}` in column `{column}` (row {row}) as a number")]
    ParseNumber { column: String, row: usize, value: String },
    #[error("value {value} in column `{column}` (row {row}) outside [0, 100]")]
    OutOfRange { column: String, row: usize, value: f64 },
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix still singular after jitter escalation (last lambda {0:e})")]
    Singular(f64),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("zero-norm {what} at row {row}")]
    ZeroNorm { what: &'static str, row: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate residuals: every train feature lies inside the principal space")]
    DegenerateResiduals,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("method {method} needs {missing}")]
    MissingStatistic { method: String, missing: String },
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("provenance mismatch: {0}")]
    Provenance(String),
    #[error("fit failed for {}", .0.iter().map(|(m, e)| format!("{m}: {e}")).collect::<Vec<_>>().join("; "))]
    FitFailed(Vec<(String, Error)>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }
}
