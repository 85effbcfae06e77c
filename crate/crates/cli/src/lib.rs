//! Command-line front end for the `smcgm` sampler.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use error::{CliError, CliResult};
