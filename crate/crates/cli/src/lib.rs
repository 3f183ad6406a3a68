//! Config loading, experiment commands and result files for the `capnmpc` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{Overrides, RunConfig};
pub use error::{exit, CliError};
