//! Decoder presets fitted to a clean image and to a noisy copy, tracking
//! PSNR to the clean image after every Adam step.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::{json, Value};
use speckle_core::decoder::{fit_observed, DecoderArch};
use speckle_core::metrics::psnr;
use speckle_core::sensing::{derive_seed, stream_rng};

use crate::config::{ExperimentConfig, Preset};
use crate::error::Result;
use crate::output::OutDir;
use crate::problem::{load_scene, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct OverfitCurve {
    pub preset: Preset,
    pub noisy: bool,
    pub seed: usize,
    /// PSNR to the clean image before step 0, 1, … and after the last step.
    pub psnr: Vec<f64>,
}

impl OverfitCurve {
    /// Index of the best PSNR (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.psnr.iter().enumerate() {
            if p > self.psnr[best] {
                best = i;
            }
        }
        best
    }

    pub fn final_psnr(&self) -> f64 {
        *self.psnr.last().expect("non-empty curve")
    }
}

#[derive(Debug, Serialize)]
struct CurveRow<'a> {
    preset: String,
    target: &'a str,
    seed: usize,
    iter: usize,
    psnr: f64,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    preset: String,
    target: &'static str,
    seed: usize,
    final_psnr: f64,
    max_psnr: f64,
    argmax_iter: usize,
}

/// `clean + σ·N(0, 1)` per pixel, unclipped.
pub fn noisy_copy(clean: &Array1<f64>, sigma: f64, seed: u64) -> Array1<f64> {
    let mut rng = stream_rng(seed, 0);
    clean.mapv(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Every preset on the clean and the noisy target, for every seed. The two
/// targets of one preset share the decoder initialisation.
pub fn study(cfg: &ExperimentConfig) -> Result<Vec<OverfitCurve>> {
    let scene = load_scene(cfg)?;
    let clean = scene.pixels().clone();
    let mut curves = Vec::new();
    for s in 0..cfg.seeds {
        let run_seed = derive_seed(cfg.seed, &[s as u64]);
        let noisy = noisy_copy(&clean, cfg.noise_sigma, derive_seed(run_seed, &[stream::NOISE]));
        for (p, preset) in cfg.presets.iter().enumerate() {
            let arch = DecoderArch::new(preset.channels, preset.kernel, scene.height(), scene.width())?;
            let fit_seed = derive_seed(run_seed, &[stream::DECODER, p as u64]);
            for (is_noisy, goal) in [(false, &clean), (true, &noisy)] {
                let mut curve = Vec::with_capacity(cfg.fit_iters + 1);
                fit_observed(goal.view(), arch, cfg.fit_iters, cfg.lr, fit_seed, |_, out, _| {
                    curve.push(psnr(out.view(), clean.view()).unwrap_or(f64::NAN));
                })?;
                log::info!(
                    "{} {} seed {s}: final {:.3} max {:.3}",
                    preset.label(),
                    target(is_noisy),
                    curve.last().copied().unwrap_or(f64::NAN),
                    curve.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                );
                curves.push(OverfitCurve {
                    preset: *preset,
                    noisy: is_noisy,
                    seed: s,
                    psnr: curve,
                });
            }
        }
    }
    Ok(curves)
}

fn target(noisy: bool) -> &'static str {
    if noisy {
        "noisy"
    } else {
        "clean"
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Value> {
    let curves = study(cfg)?;
    let out = OutDir::create(&cfg.out_dir)?;
    let rows: Vec<CurveRow> = curves
        .iter()
        .flat_map(|c| {
            c.psnr.iter().enumerate().map(move |(i, &p)| CurveRow {
                preset: c.preset.label(),
                target: target(c.noisy),
                seed: c.seed,
                iter: i,
                psnr: p,
            })
        })
        .collect();
    out.csv("overfit.csv", &rows)?;
    let summary: Vec<SummaryRow> = curves
        .iter()
        .map(|c| SummaryRow {
            preset: c.preset.label(),
            target: target(c.noisy),
            seed: c.seed,
            final_psnr: c.final_psnr(),
            max_psnr: c.psnr[c.argmax()],
            argmax_iter: c.argmax(),
        })
        .collect();
    out.csv("overfit_summary.csv", &summary)?;
    let results = json!({ "curves": serde_json::to_value(
        summary.iter().map(|r| json!({
            "preset": r.preset, "target": r.target, "seed": r.seed,
            "final_psnr": r.final_psnr, "max_psnr": r.max_psnr, "argmax_iter": r.argmax_iter,
        })).collect::<Vec<_>>()
    )? });
    out.report(cfg, results.clone())?;
    Ok(results)
}
