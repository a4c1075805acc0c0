//! Command implementations behind the `overlap-lab` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{cmd_bound, cmd_run, cmd_sweep, cmd_verify, CommandOptions};
pub use config::{load_config, ResolvedConfig, RunConfig};
pub use error::{CliError, Result};
