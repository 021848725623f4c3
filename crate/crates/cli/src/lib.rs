//! Command-line tools and HTTP service for the KRAL pipeline.

pub mod app;
pub mod cli;
pub mod error;
pub mod server;

pub use cli::{run, Cli, Command};
pub use error::{exit, CliError, CliResult};
