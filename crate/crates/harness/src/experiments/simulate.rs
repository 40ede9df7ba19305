use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::OutDir;
use crate::problem::{load_scene, measurements};

/// Writes `ensemble.bin` (sensing matrix and looks) and the scene as
/// `scene.png` / `scene.f64`.
pub fn run(cfg: &ExperimentConfig) -> Result<Value> {
    let scene = load_scene(cfg)?;
    let ens = measurements(cfg, &scene, cfg.m_over_n, cfg.looks, cfg.seed)?;
    let out = OutDir::create(&cfg.out_dir)?;
    ens.save(out.path("ensemble.bin"))?;
    out.image("scene", scene.pixels().view(), scene.height(), scene.width())?;
    let results = json!({
        "height": scene.height(),
        "width": scene.width(),
        "m": ens.m(),
        "n": ens.n(),
        "looks": ens.num_looks(),
    });
    out.report(cfg, results.clone())?;
    Ok(results)
}
