//! Experiment runner for the `dtmc` library: configuration, builtin experiments,
//! rate fitting and report emission. The `dtmc` binary wraps [`run_experiment`].

pub mod config;
pub mod error;
pub mod experiments;
pub mod fit;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiments::{run_experiment, ExperimentReport};
