//! Command implementations behind the `semctx` binary, plus the planted
//! synthetic dataset generator.

pub mod commands;
pub mod config;
pub mod error;
pub mod synth;

pub use error::CliError;
