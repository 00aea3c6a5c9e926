use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero-norm vector passed to {0}")]
    ZeroNorm(&'static str),

    #[error("covariance has rank {achieved}, fewer than the {requested} requested components")]
    RankDeficient { achieved: usize, requested: usize },

    #[error("bad magic in tensor file")]
    BadMagic,

    #[error("unsupported tensor file version {0}")]
    VersionMismatch(u32),

    #[error("unknown tensor dtype code {0}")]
    UnknownDType(u32),

    #[error("tensor file dtype {found} does not match requested {expected}")]
    DTypeMismatch { expected: u32, found: u32 },

    #[error("truncated tensor payload")]
    Truncated,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("missing batch for mode: {0}")]
    MissingBatch(&'static str),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short identifier, used by the CLI's machine-parsable error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ZeroNorm(_) => "zero_norm",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::BadMagic => "bad_magic",
            Error::VersionMismatch(_) => "version_mismatch",
            Error::UnknownDType(_) => "unknown_dtype",
            Error::DTypeMismatch { .. } => "dtype_mismatch",
            Error::Truncated => "truncated",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
            Error::MissingBatch(_) => "missing_batch",
        }
    }
}
