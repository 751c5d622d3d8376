use thiserror::Error;

/// Crate-wide error type. Variants follow the failure vocabulary used by the
/// public operations: shape/dimension problems, numeric breakdown, label and
/// batch degeneracies, contract misuse, config problems, and file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for {op}: {shape:?} ({msg})")]
    Shape {
        op: &'static str,
        shape: Vec<usize>,
        msg: String,
    },

    #[error("non-finite value produced by {0}")]
    Numeric(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: i64, classes: usize },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(&'static str),

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("incompatible checkpoint version {found} (this build reads {expected})")]
    Incompatible { found: u32, expected: u32 },

    #[error("metric error: {0}")]
    Metric(&'static str),

    #[error("optimizer abort: {0}")]
    Optimizer(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
