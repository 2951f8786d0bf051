//! Simulate, fit, evaluate and sweep workflows behind the `latent-dag` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod truth;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
