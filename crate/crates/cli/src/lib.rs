//! Scenario files, CSV reports, the command implementations behind the
//! `robust-growth` binary, and the acceptance checks.

pub mod acceptance;
pub mod commands;
pub mod config;
mod error;
pub mod report;
pub mod scenario;

pub use error::CliError;
