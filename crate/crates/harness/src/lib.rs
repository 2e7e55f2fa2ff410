//! Experiment harness: dataset and model files, configuration, the
//! train/attack/evaluate pipeline and report emission.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod report;
pub mod synth;
pub mod tensor_io;
pub mod weights;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
