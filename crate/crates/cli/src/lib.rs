//! Command-line harness: Monte Carlo experiments, single-dataset analysis,
//! influence-function oracle checks and synthetic data export.

pub mod analyze;
pub mod config;
pub mod error;
pub mod gen_data;
pub mod oracle_check;
pub mod simulate;
pub mod summary;

mod output;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
