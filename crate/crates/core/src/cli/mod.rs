//! Command-line front end: configuration, run modes and file output.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{parse_config, Mode, Overrides, RunConfig};
pub use runner::{run, RunOutcome};
