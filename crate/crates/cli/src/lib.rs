//! Argument parsing, configuration resolution and the subcommand drivers behind `eitm`.

pub mod args;
pub mod commands;
pub mod config;

use std::fmt;

use eit_manifold::EitError;

pub const OUTPUT_ROOT_ENV: &str = "EITM_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "eitm-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Verification(String),
    Run(EitError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::Run(EitError::Divergence(_)) => EXIT_DIVERGED,
            CliError::Run(_) => EXIT_USAGE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<EitError> for CliError {
    fn from(e: EitError) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(e.into())
    }
}
