//! Experiment runner for multilook speckle reconstruction.
//!
//! Each experiment reads an [`config::ExperimentConfig`], writes its artifacts
//! (images, CSV tables, `report.json`) to the output directory and returns
//! its headline numbers as JSON.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod problem;
pub mod spectral;

pub use config::{Experiment, ExperimentConfig};
pub use error::{HarnessError, Result};
