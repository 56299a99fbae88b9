//! IO companion to `sparse-forge-core`: binary tensor/checkpoint formats,
//! CSV readers and writers, JSON config and report types, and the partition
//! plan schema the `sparse-forge` binary consumes.

pub mod config;
pub mod formats;
pub mod plan;
pub mod rollout;

use std::fmt;

/// Top-level error split along the exit-code contract: validation problems
/// exit 1, I/O problems exit 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn validation(err: impl fmt::Display) -> Self {
        Self::Validation(err.to_string())
    }

    pub fn io(context: &str, err: impl fmt::Display) -> Self {
        Self::Io(format!("{context}: {err}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
