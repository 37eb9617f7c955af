//! `favae` command-line front end and HTTP edit service.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags, unreadable or
//! invalid config, `mix` assignments that do not partition the dimensions),
//! 2 for runtime failures.

pub mod args;
mod commands;
pub mod config;
pub mod service;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;
use thiserror::Error;

pub use args::Cli;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] favae_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(favae_core::Error::Config(_) | favae_core::Error::Partition(_)) => 1,
            _ => 2,
        }
    }
}

/// Parse `argv` (including the program name), run the subcommand and
/// return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            if code == 1 {
                eprintln!("\nFor more information, try '--help'.");
            }
            code
        }
    }
}
