//! One module per subcommand. Each `run` validates the configuration,
//! computes, writes its artifacts under `out_dir` and returns the results
//! that went into `report.json`.

pub mod metrics;
pub mod ns_compare;
pub mod overfit;
pub mod reconstruct;
pub mod scaling;
pub mod simulate;
pub mod threshold;

use serde_json::Value;

use crate::config::{Experiment, ExperimentConfig};
use crate::error::Result;

pub fn run(cfg: &ExperimentConfig) -> Result<Value> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::Simulate => simulate::run(cfg),
        Experiment::Reconstruct => reconstruct::run(cfg),
        Experiment::NsCompare => ns_compare::run(cfg),
        Experiment::ThresholdStudy => threshold::run(cfg),
        Experiment::ScalingStudy => scaling::run(cfg),
        Experiment::OverfitStudy => overfit::run(cfg),
        Experiment::Metrics => metrics::run(cfg),
    }
}
