use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A corpus line failed to parse or violated a record invariant.
    #[error("line {line}{}: {message}", record_id.as_ref().map(|id| format!(" (record {id})")).unwrap_or_default())]
    Corpus {
        line: usize,
        record_id: Option<String>,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    /// Zero-norm embeddings, constant score sequences and similar inputs for
    /// which the requested quantity is undefined.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("task file {path}: {message}")]
    TaskFile { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corpus(line: usize, record_id: Option<&str>, message: impl Into<String>) -> Self {
        Error::Corpus {
            line,
            record_id: record_id.map(str::to_owned),
            message: message.into(),
        }
    }

    /// Machine-readable error class used by the CLI.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Corpus { .. } | Error::TaskFile { .. } => "validation",
            Error::InvalidArgument(_) | Error::Config(_) => "bad-arguments",
            Error::Degenerate(_) => "degenerate",
            Error::NonFinite(_) => "numeric",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}
