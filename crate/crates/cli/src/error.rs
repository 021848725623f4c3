use kral_core::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] kral_core::Error),

    #[error("usage: {0}")]
    Usage(String),

    #[error("server: {0}")]
    Server(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

/// Process exit codes; 0 is success and 2 is reserved for usage errors.
pub mod exit {
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const INPUT: u8 = 4;
    pub const REMOTE: u8 = 5;
    pub const INDEX: u8 = 6;
    pub const TRAINING: u8 = 7;
    pub const EVALUATION: u8 = 8;
    pub const IO: u8 = 9;
    pub const SERVER: u8 = 10;
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Server(_) => exit::SERVER,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => exit::CONFIG,
                ErrorClass::Input => exit::INPUT,
                ErrorClass::Remote => exit::REMOTE,
                ErrorClass::Index => exit::INDEX,
                ErrorClass::Training => exit::TRAINING,
                ErrorClass::Evaluation => exit::EVALUATION,
                ErrorClass::Io => exit::IO,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
