//! Scenario files, run orchestration and output formats for the `smpc`
//! binary.

pub mod commands;
pub mod error;
pub mod output;
pub mod scenario;

pub use commands::{cmd_bench, cmd_run, cmd_sweep, cmd_validate, Mode, Overrides, RunSummary};
pub use error::CliError;
pub use scenario::ScenarioFile;
