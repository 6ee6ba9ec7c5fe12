//! Experiment runner for the `pmafl` simulator: configuration, seeded
//! simulation loops, sweeps and CSV output.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod sim;

pub use config::{ExperimentConfig, Policy};
pub use error::CliError;
pub use experiment::{run_experiment, run_sweep, SweepAxis};
pub use sim::{simulate, MetricsRow, RunResult};
