//! Experiment plumbing around `scpl-core`: sweep configs, artifact formats,
//! the sweep runner and trend reports.

pub mod config;
pub mod formats;
pub mod report;
pub mod runner;

pub use config::{load_config, parse_config, ConfigError, ExperimentSpec, SweepSpec};
