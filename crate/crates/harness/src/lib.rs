//! Experiment orchestration for `mmwdet-core`: file formats, CSV result
//! schemas and the SER, robustness, convergence and runtime studies.

pub mod config;
pub mod error;
pub mod experiments;
pub mod files;
pub mod records;

pub use config::{ExperimentConfig, ExperimentKind, TrainSnr};
pub use error::{HarnessError, Result};
