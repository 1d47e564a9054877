use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A manifest or config line could not be parsed.
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A manifest record violates an `ItemRecord` invariant.
    #[error("constraint violation: {0}")]
    Constraint(String),

    /// A vector file is malformed (bad magic, truncation, header mismatch, CRC).
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Shapes, dimensions or counts of two inputs disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("zero-norm row {row} (item '{item_id}')")]
    ZeroNorm { row: usize, item_id: String },

    #[error("config error: {0}")]
    Config(String),

    /// Two pipeline stages cannot be combined as requested.
    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("evaluation error: {0}")]
    Eval(String),
}

impl Error {
    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Constraint(_) => "constraint",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Shape(_) => "shape",
            Error::InvalidParam(_) => "invalid_param",
            Error::ZeroNorm { .. } => "zero_norm",
            Error::Config(_) => "config",
            Error::Pipeline(_) => "pipeline",
            Error::Eval(_) => "eval",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
