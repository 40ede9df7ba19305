//! PSNR over a grid of sampling ratios and look counts.
//!
//! The scene is fixed. Per seed and ratio one sensing matrix and the largest
//! number of looks are drawn; smaller look counts use the leading looks.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};
use speckle_core::sensing::{derive_seed, MeasurementEnsemble, Scene};

use crate::config::ExperimentConfig;
use crate::error::{config_err, Result};
use crate::experiments::reconstruct::reconstruct;
use crate::output::OutDir;
use crate::problem::{load_scene, measurements, pgd_config};

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRun {
    pub m_over_n: f64,
    #[serde(rename = "L")]
    pub looks: usize,
    pub seed: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_initial: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingCell {
    pub m_over_n: f64,
    #[serde(rename = "L")]
    pub looks: usize,
    pub runs: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingSummary {
    pub cells: Vec<ScalingCell>,
    /// Mean PSNR gain when `m` doubles, over all doubling pairs and looks.
    pub m_doubling_gain_db: Option<f64>,
    /// Mean PSNR gain when `L` doubles, over all doubling pairs and ratios.
    pub l_doubling_gain_db: Option<f64>,
    /// Mean PSNR is nondecreasing in `L` at every ratio.
    pub monotone_in_looks: bool,
}

/// Runs the whole grid; `observer` sees every finished run.
pub fn study(cfg: &ExperimentConfig, mut observer: impl FnMut(&[ScalingRun]) -> Result<()>) -> Result<Vec<ScalingRun>> {
    let scene = load_scene(cfg)?;
    let max_looks = *cfg.grid_looks.iter().max().ok_or_else(|| config_err("grid_looks is empty"))?;
    let mut runs = Vec::new();
    for s in 0..cfg.seeds {
        for (k, &ratio) in cfg.grid_m_over_n.iter().enumerate() {
            let run_seed = derive_seed(cfg.seed, &[s as u64, k as u64]);
            let full = measurements(cfg, &scene, ratio, max_looks, run_seed)?;
            for &looks in &cfg.grid_looks {
                let ens = full.truncate_looks(looks)?;
                runs.push(one_run(cfg, &scene, &ens, ratio, looks, s, run_seed)?);
                observer(&runs)?;
            }
        }
    }
    Ok(runs)
}

fn one_run(
    cfg: &ExperimentConfig,
    scene: &Scene,
    ens: &MeasurementEnsemble,
    ratio: f64,
    looks: usize,
    seed: usize,
    run_seed: u64,
) -> Result<ScalingRun> {
    let pgd = pgd_config(cfg, scene.height(), scene.width(), looks, ratio, run_seed)?;
    let outcome = reconstruct(ens, Some(scene), &pgd)?;
    let last = outcome.last.expect("reference given");
    let run = ScalingRun {
        m_over_n: ratio,
        looks,
        seed,
        psnr: last.psnr_db,
        ssim: last.ssim,
        psnr_initial: outcome.initial.expect("reference given").psnr_db,
        seconds: outcome.trace.last().map(|r| r.seconds).unwrap_or(0.0),
    };
    log::info!("m/n {ratio} L {looks} seed {seed}: psnr {:.3} ({:.0}s)", run.psnr, run.seconds);
    Ok(run)
}

fn is_double(a: f64, b: f64) -> bool {
    (b - 2.0 * a).abs() <= 1e-9 * b.abs()
}

pub fn summarize(runs: &[ScalingRun]) -> ScalingSummary {
    let mut cells: BTreeMap<(u64, usize), Vec<&ScalingRun>> = BTreeMap::new();
    for r in runs {
        cells.entry((r.m_over_n.to_bits(), r.looks)).or_default().push(r);
    }
    let cells: Vec<ScalingCell> = cells
        .into_values()
        .map(|rs| ScalingCell {
            m_over_n: rs[0].m_over_n,
            looks: rs[0].looks,
            runs: rs.len(),
            mean_psnr: rs.iter().map(|r| r.psnr).sum::<f64>() / rs.len() as f64,
            mean_ssim: rs.iter().map(|r| r.ssim).sum::<f64>() / rs.len() as f64,
        })
        .collect();
    let mut m_gains = Vec::new();
    let mut l_gains = Vec::new();
    for a in &cells {
        for b in &cells {
            if a.looks == b.looks && is_double(a.m_over_n, b.m_over_n) {
                m_gains.push(b.mean_psnr - a.mean_psnr);
            }
            if a.m_over_n == b.m_over_n && b.looks == 2 * a.looks {
                l_gains.push(b.mean_psnr - a.mean_psnr);
            }
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let monotone_in_looks = cells.iter().all(|c| {
        cells
            .iter()
            .filter(|d| d.m_over_n == c.m_over_n && d.looks > c.looks)
            .all(|d| d.mean_psnr >= c.mean_psnr)
    });
    ScalingSummary {
        m_doubling_gain_db: mean(&m_gains),
        l_doubling_gain_db: mean(&l_gains),
        monotone_in_looks,
        cells,
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Value> {
    let out = OutDir::create(&cfg.out_dir)?;
    let runs = study(cfg, |runs| {
        out.csv("scaling_runs.csv", runs)?;
        Ok(())
    })?;
    let summary = summarize(&runs);
    out.csv("scaling.csv", &summary.cells)?;
    let results = serde_json::to_value(&summary)?;
    out.report(cfg, json!({"summary": results, "runs": runs.len()}))?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(ratio: f64, looks: usize, psnr: f64) -> ScalingRun {
        ScalingRun {
            m_over_n: ratio,
            looks,
            seed: 0,
            psnr,
            ssim: 0.0,
            psnr_initial: 0.0,
            seconds: 0.0,
        }
    }

    #[test]
    fn gains_average_over_doubling_pairs() {
        let runs = vec![
            run(0.25, 25, 10.0),
            run(0.25, 50, 11.0),
            run(0.5, 25, 14.0),
            run(0.5, 50, 16.0),
            run(0.5, 50, 14.0),
        ];
        let s = summarize(&runs);
        assert_eq!(s.cells.len(), 4);
        // m gains: 14 − 10 and 15 − 11; L gains: 1 and 1.
        assert!((s.m_doubling_gain_db.unwrap() - 4.0).abs() < 1e-12);
        assert!((s.l_doubling_gain_db.unwrap() - 1.0).abs() < 1e-12);
        assert!(s.monotone_in_looks);
        let s = summarize(&[run(0.5, 25, 3.0), run(0.5, 100, 2.0)]);
        assert!(!s.monotone_in_looks);
        assert!(s.l_doubling_gain_db.is_none());
    }
}
