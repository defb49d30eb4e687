//! Command-line harness: dataset generation, training, evaluation, tabular
//! verification and parameter sweeps.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use cli::run;
pub use config::RunConfig;
pub use error::CliError;
