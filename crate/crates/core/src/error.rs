use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("no positive interactions at rating threshold {0}")]
    NoPositives(f64),

    #[error("dataset eliminated by filtering")]
    EmptyAfterFilter,

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad {what} file: {msg}")]
    Format {
        path: PathBuf,
        what: &'static str,
        msg: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite value during {phase}\n{dump}")]
    NonFinite { phase: String, dump: String },

    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            what,
            msg: msg.into(),
        }
    }
}
