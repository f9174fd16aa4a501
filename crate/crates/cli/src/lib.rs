//! Experiment harness for the `qtrace-nac` command-line tool.

pub mod config;
pub mod experiment;
pub mod svg;

pub use config::{ExperimentConfig, Mode, PolicySpec, BUILTIN_CYCLIC};
pub use experiment::{aggregate, mean_std, record_table, run_experiment, Report, Table};
