//! Command-line driver: configuration, subcommands and the exit-code contract.

pub mod commands;
pub mod config;

use std::fmt;

/// Exit code for bad configuration, arguments or input files.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for numeric or other failures while running.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }

    /// Input problems exit with 2; numeric failures while reading still exit with 3.
    pub fn input(e: bcalign_core::Error) -> Self {
        CliError {
            code: commands::classify(&e),
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}
