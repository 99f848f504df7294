//! Configuration-driven experiments on top of `oqw-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::run;
pub use error::{CliError, CliResult};
