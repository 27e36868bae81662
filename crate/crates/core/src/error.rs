use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by who is at fault: the caller's configuration or
/// input files ([`Error::is_config`]) versus an external model, embedding or
/// completion service ([`Error::is_backend`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {message}")]
    Config { field: &'static str, message: String },

    #[error("{}line {line}: {message}", path_prefix(.path))]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        message: String,
    },

    #[error("distribution for prefix `{prefix}` does not sum to 1 (sum = {sum})")]
    Normalization { prefix: String, sum: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("cosine similarity of an all-zero vector is undefined")]
    ZeroVector,

    #[error("no embedding for {kind} `{key}`")]
    MissingEmbedding { kind: &'static str, key: String },

    #[error("invalid token id {id} (vocabulary size {vocab_size})")]
    InvalidToken { id: u32, vocab_size: usize },

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("completion service error: {0}")]
    Service(String),

    #[error("completion service returned an empty response")]
    EmptyResponse,

    #[error("ranked tag list has {found} tags, at least {required} required")]
    TooFewTags { found: usize, required: usize },

    #[error("template render error: {0}")]
    Render(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn path_prefix(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!("{}: ", p.display()),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn parse(path: Option<&std::path::Path>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.map(|p| p.to_path_buf()),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by the caller's configuration or input data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::Parse { .. }
                | Error::Normalization { .. }
                | Error::Precondition(_)
                | Error::Dimension { .. }
                | Error::InvalidToken { .. }
                | Error::Render(_)
                | Error::Io { .. }
        )
    }

    /// Errors raised by a model, embedding provider or completion service.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::BackendUnavailable(_)
                | Error::Protocol(_)
                | Error::Service(_)
                | Error::EmptyResponse
                | Error::MissingEmbedding { .. }
                | Error::ZeroVector
        )
    }
}
