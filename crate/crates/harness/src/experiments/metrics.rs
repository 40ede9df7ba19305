use std::path::Path;

use serde_json::{json, Value};
use speckle_core::metrics::MetricReport;
use speckle_core::sensing::Scene;

use crate::config::ExperimentConfig;
use crate::error::{config_err, Result};

fn load(path: &Path) -> Result<Scene> {
    Scene::load(path, f64::MIN_POSITIVE).map_err(|e| config_err(format!("cannot load image {}: {e}", path.display())))
}

/// MSE, PSNR and SSIM of `estimate` against `reference`; nothing is written.
pub fn run(cfg: &ExperimentConfig) -> Result<Value> {
    let (Some(est), Some(reference)) = (&cfg.estimate, &cfg.reference) else {
        return Err(config_err("metrics needs both estimate and reference images"));
    };
    let (a, b) = (load(est)?, load(reference)?);
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(config_err(format!(
            "estimate is {}x{} but reference is {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let r = MetricReport::compute(a.pixels().view(), b.pixels().view(), a.height(), a.width())?;
    Ok(json!({"mse": r.mse, "psnr": r.psnr_db, "ssim": r.ssim}))
}
