use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Other,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    Decode { path: PathBuf, offset: usize },
    #[error("parallel files are not aligned: {src_lines} source lines vs {tgt_lines} target lines")]
    Alignment { src_lines: usize, tgt_lines: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("id out of range: {0}")]
    Range(String),
    #[error("unknown target language factor `{0}`")]
    Factor(String),
    #[error("cannot transfer parameters, mismatched tensors: {}", .0.join(", "))]
    Transfer(Vec<String>),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("cannot aggregate scores, missing direction {0}")]
    Aggregation(String),
    #[error("experiment state error: {0}")]
    State(String),
    #[error("invalid toy language spec: {0}")]
    Spec(String),
    #[error("decoding failed on {failed} of {total} lines")]
    Synthesis { failed: usize, total: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Spec(_) | Error::Transfer(_) | Error::Factor(_) => {
                ErrorClass::Config
            }
            Error::Io { .. }
            | Error::Decode { .. }
            | Error::Alignment { .. }
            | Error::Format { .. }
            | Error::Input(_)
            | Error::Aggregation(_) => ErrorClass::Data,
            Error::NonFinite { .. } | Error::Synthesis { .. } => ErrorClass::Numeric,
            Error::Range(_) | Error::State(_) => ErrorClass::Other,
        }
    }
}
