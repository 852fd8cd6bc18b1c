use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("plane is not binary: value {value} at index {index}")]
    NonBinary { index: usize, value: f64 },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("bad tensor file magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unknown tensor dtype code {0}")]
    UnknownDtype(u32),

    #[error("truncated tensor file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("tensor dims overflow: {0:?}")]
    DimsOverflow(Vec<u32>),

    #[error("tensor dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch { expected: &'static str, found: &'static str },

    #[error("image codec: {0}")]
    Image(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("scene density infeasible: placed {placed} of {requested} instances ({detail})")]
    InfeasibleDensity { placed: usize, requested: usize, detail: String },

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch { expected: expected.to_string(), found: found.to_string() }
    }

    /// Stable numeric code per failure kind, used by the CLI and in logs.
    pub fn code(&self) -> u32 {
        match self {
            Error::InvalidInput(_) => 10,
            Error::ShapeMismatch { .. } => 11,
            Error::NonBinary { .. } => 12,
            Error::NonFinite(_) => 13,
            Error::EmptyMask => 14,
            Error::BadMagic(_) => 20,
            Error::UnknownDtype(_) => 21,
            Error::Truncated { .. } => 22,
            Error::DimsOverflow(_) => 23,
            Error::DtypeMismatch { .. } => 24,
            Error::Image(_) => 25,
            Error::Io { .. } => 30,
            Error::InfeasibleDensity { .. } => 40,
            Error::Divergence { .. } => 50,
            Error::Config(_) => 60,
        }
    }
}
