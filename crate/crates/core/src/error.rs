use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Model or backend output that does not follow the expected layout.
    #[error("format error: {message}")]
    Format { message: String, raw: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("backend error after {attempts} attempt(s): {message}")]
    Backend { message: String, attempts: usize },

    #[error("environment error: {0}")]
    Environment(String),

    #[error("cannot classify document {path}: {reason}")]
    Classification { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    PathIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(message: impl Into<String>, raw: impl Into<String>) -> Self {
        Error::Format {
            message: message.into(),
            raw: raw.into(),
        }
    }

    pub(crate) fn at_path(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::PathIo { path, source }
    }

    /// Stable snake_case name of the variant, for structured reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::NumericDomain(_) => "numeric_domain",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Parse { .. } => "parse",
            Error::Backend { .. } => "backend",
            Error::Environment(_) => "environment",
            Error::Classification { .. } => "classification",
            Error::PathIo { .. } | Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
