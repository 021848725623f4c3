use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the KRAL pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("remote endpoint unreachable: {0}")]
    RemoteUnreachable(String),

    #[error("remote endpoint returned a malformed response: {0}")]
    RemoteMalformed(String),

    #[error("index is empty")]
    EmptyIndex,

    #[error("unknown chunk `{0}`")]
    UnknownChunk(String),

    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("gold keyword list is empty")]
    EmptyGold,

    #[error("missing gold label: {0}")]
    MissingGold(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("teacher failure: {0}")]
    Teacher(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("evaluation protocol: {0}")]
    Protocol(String),

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse grouping of [`Error`] variants, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Input,
    Remote,
    Index,
    Training,
    Evaluation,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) => ErrorClass::Config,
            Error::Parse { .. }
            | Error::DuplicateId(_)
            | Error::DimensionMismatch { .. }
            | Error::ZeroVector
            | Error::EmptyGold
            | Error::MissingGold(_)
            | Error::Precondition(_)
            | Error::Empty(_)
            | Error::LengthMismatch { .. }
            | Error::InvalidTrajectory(_)
            | Error::Json(_) => ErrorClass::Input,
            Error::RemoteUnreachable(_) | Error::RemoteMalformed(_) | Error::Teacher(_) => {
                ErrorClass::Remote
            }
            Error::EmptyIndex | Error::UnknownChunk(_) | Error::CorruptSnapshot(_) => {
                ErrorClass::Index
            }
            Error::Diverged { .. } => ErrorClass::Training,
            Error::Protocol(_) | Error::UnknownSession(_) => ErrorClass::Evaluation,
            Error::Io(_) => ErrorClass::Io,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
