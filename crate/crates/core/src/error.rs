use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}: line {line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ticker {0:?} has no category assignment")]
    MissingCategory(String),

    #[error("window schedule is empty: {total} observations cannot hold a window of {length}")]
    EmptySchedule { total: usize, length: usize },

    #[error("no lagged date pairs could be formed between the two calendars")]
    NoAlignment,

    #[error("spanning tree needs at least 2 usable nodes, found {0}")]
    TooFewNodes(usize),
}

impl Error {
    pub(crate) fn parse(source_name: impl Into<String>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
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

    /// Whether the error stems from configuration rather than from the data itself.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}
