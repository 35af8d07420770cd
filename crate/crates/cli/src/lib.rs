//! Batch front-end for the collisional decoherence library: scenario
//! configs, the `rates`, `evolve`, `trajectories` and `verify` commands,
//! and the exit-code contract.

pub mod commands;
pub mod config;
pub mod verify;

use std::fmt;

pub use config::ConfigError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Run(collisional::Error),
    /// Names of the failed invariants.
    VerifyFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Run(_) => EXIT_CONFIG,
            CliError::VerifyFailed(_) => EXIT_VERIFY_FAILED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Run(e) if e.is_numerical() => write!(f, "numerical failure: {e}"),
            CliError::Run(e) => write!(f, "error: {e}"),
            CliError::VerifyFailed(names) => write!(f, "verification failed: {}", names.join(", ")),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<collisional::Error> for CliError {
    fn from(e: collisional::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}
