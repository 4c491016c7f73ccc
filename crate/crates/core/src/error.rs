use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on {axis}: {detail}")]
    Dimension {
        op: &'static str,
        axis: String,
        detail: String,
    },

    #[error("{op}: input too short (length {len} < required {required})")]
    InputTooShort {
        op: &'static str,
        len: usize,
        required: usize,
    },

    #[error("{op}: length {len} must be even; right-pad the signal before transforming")]
    OddLength { op: &'static str, len: usize },

    #[error("requested {requested} decomposition levels for length {len}, at most {max} are feasible{hint}")]
    Level {
        requested: usize,
        len: usize,
        max: usize,
        hint: String,
    },

    #[error("inconsistent wavelet pyramid: {0}")]
    PyramidShape(String),

    #[error("unsupported wavelet family `{0}` (expected haar, db2 or db4)")]
    UnsupportedFamily(String),

    #[error("layer_norm: last dimension of size 1 with eps = 0 divides by zero variance")]
    DivisionHazard,

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("backward: tensor is not attached to a gradient tape (detached, constant, or tape already freed)")]
    NoTape,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown configuration key `{key}`; valid keys: {valid}")]
    UnknownKey { key: String, valid: String },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("{}:{line}: {msg}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("data integrity: {0}")]
    Integrity(String),

    #[error("unsupported feature: {0}")]
    Unsupported(String),

    #[error("dataset already standardized")]
    AlreadyStandardized,

    #[error("incompatible data: {what} is {found}, checkpoint expects {expected}")]
    Compatibility {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged {
        epoch: usize,
        metrics: Box<crate::trainer::RunMetrics>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("index {index} out of range (size {len})")]
    Bounds { index: usize, len: usize },

    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(
        op: &'static str,
        axis: impl Into<String>,
        detail: impl Into<String>,
    ) -> Self {
        Error::Dimension {
            op,
            axis: axis.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit code for the CLI: 2 usage, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownKey { .. } | Error::UnsupportedFamily(_) => 2,
            Error::NonFiniteGradient(_) | Error::Diverged { .. } => 4,
            _ => 3,
        }
    }
}
