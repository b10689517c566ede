//! Command-line driver: configuration, checkpoints and the six subcommands.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure,
//! 4 checkpoint or config version mismatch.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::{run, Cli};
pub use config::Config;
pub use error::{CliError, CliResult};
