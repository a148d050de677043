//! Growing, measuring and verifying hierarchical cascade realizations from
//! the command line. The binary is a thin wrapper over [`commands`].

pub mod commands;
pub mod config;
pub mod error;
pub mod realization_file;
pub mod render;
pub mod suites;

pub use config::{RunConfig, Suite};
pub use error::CliError;
