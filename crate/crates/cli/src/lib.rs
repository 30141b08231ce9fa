//! Command-line front end for `mlpform-core`: IDX ingestion, configuration
//! strings, training/evaluation/gradient-check commands, metrics CSV and
//! checkpoints. All file and console I/O of the project lives here.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod idx;

pub use commands::{Cli, Command};
pub use config::{DataSource, OptimizerSpec, TrainConfig};
pub use error::{CliError, CliResult};
