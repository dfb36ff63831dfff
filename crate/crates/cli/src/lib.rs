//! Command-line entry point and HTTP annotation service for the egotime
//! video indexing engine.

pub mod commands;
pub mod config;
pub mod service;
pub mod workspace;

use thiserror::Error;

/// Caller-side failures the core library does not know about.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

/// Map an error chain to the process exit code: 2 when any link is a
/// validation problem, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let validation = err.chain().any(|cause| {
        cause.is::<CliError>()
            || cause.is::<serde_json::Error>()
            || cause.downcast_ref::<egotime_core::Error>().is_some_and(egotime_core::Error::is_validation)
    });
    if validation {
        EXIT_VALIDATION
    } else {
        EXIT_INTERNAL
    }
}
