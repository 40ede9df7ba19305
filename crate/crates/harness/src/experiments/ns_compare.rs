//! Tracked vs exact vs frozen inverse updates inside PGD, and the cost of
//! one update of each kind.

use std::time::Instant;

use ndarray::Array1;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};
use speckle_core::cxla::{assemble_b, exact_inverse, newton_schulz_step};
use speckle_core::invtrack::InversePolicy;
use speckle_core::pgd::{step, PgdConfig, ReconState, Reference};
use speckle_core::sensing::{derive_seed, stream_rng, MeasurementEnsemble, Scene};

use crate::config::ExperimentConfig;
use crate::error::{config_err, Result};
use crate::output::{median, OutDir};
use crate::problem::{load_scene, measurement_count, measurements, pgd_config, sensing_matrix, stream};

/// PSNR after each iteration of a run sharing the tracked run's prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBranch {
    /// Updates allowed before the inverse is frozen.
    pub freeze_at: usize,
    /// PSNR after iterations `freeze_at + 1 ..= freeze_at + window`.
    pub psnr: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub side: usize,
    pub m: usize,
    pub repeats: usize,
    /// Assembling `B` and inverting it exactly.
    pub exact_seconds: f64,
    /// Assembling `B` and one Newton-Schulz step from the previous inverse.
    pub tracked_seconds: f64,
}

fn reference(scene: &Scene) -> Reference<'_> {
    Reference {
        pixels: scene.pixels().view(),
        height: scene.height(),
        width: scene.width(),
    }
}

fn last_psnr(state: &ReconState) -> f64 {
    state.trace().last().and_then(|r| r.psnr).unwrap_or(f64::NAN)
}

/// Tracked run for `iters` iterations plus, for each freeze point `k`,
/// a branch continued for `window` iterations with the inverse frozen
/// after `k` updates. Returns the tracked PSNR trajectory and the branches.
pub fn tracked_and_frozen(
    ens: &MeasurementEnsemble,
    scene: &Scene,
    pgd: &PgdConfig,
    iters: usize,
    freeze_at: &[usize],
    window: usize,
) -> Result<(Vec<f64>, Vec<FrozenBranch>)> {
    let refer = reference(scene);
    let started = Instant::now();
    let mut state = ReconState::from_ensemble(ens, pgd)?;
    let mut tracked = Vec::new();
    let mut branches = Vec::new();
    let horizon = freeze_at.iter().map(|k| k + window).chain([iters]).max().unwrap_or(iters);
    for t in 0..horizon {
        if freeze_at.contains(&t) {
            let mut branch = state.clone();
            branch.set_inverse_policy(InversePolicy::FrozenAfter(t));
            let mut psnr = Vec::with_capacity(window);
            for _ in 0..window {
                step(&mut branch, ens, pgd, Some(refer), started)?;
                psnr.push(last_psnr(&branch));
            }
            log::info!("frozen after {t}: final psnr {:.3}", psnr.last().copied().unwrap_or(f64::NAN));
            branches.push(FrozenBranch { freeze_at: t, psnr });
        }
        step(&mut state, ens, pgd, Some(refer), started)?;
        tracked.push(last_psnr(&state));
        log::info!("tracked iter {:>3} psnr {:.3}", t + 1, tracked[t]);
    }
    branches.sort_by_key(|b| b.freeze_at);
    Ok((tracked, branches))
}

/// PSNR trajectory with an exact inverse at every iteration.
pub fn exact_run(ens: &MeasurementEnsemble, scene: &Scene, pgd: &PgdConfig, iters: usize) -> Result<Vec<f64>> {
    let mut cfg = pgd.clone();
    cfg.inverse_policy = InversePolicy::AlwaysExact;
    let mut state = ReconState::from_ensemble(ens, &cfg)?;
    let started = Instant::now();
    let mut out = Vec::with_capacity(iters);
    for t in 0..iters {
        step(&mut state, ens, &cfg, Some(reference(scene)), started)?;
        out.push(last_psnr(&state));
        log::info!("exact iter {:>3} psnr {:.3}", t + 1, out[t]);
    }
    Ok(out)
}

/// Median wall time of one exact and one tracked inverse update for a
/// `side × side` problem, with the estimate moved by a small random step
/// between updates as in PGD.
pub fn time_updates(cfg: &ExperimentConfig, side: usize, repeats: usize) -> Result<Timing> {
    let n = side * side;
    let m = measurement_count(n, cfg.m_over_n);
    let a = sensing_matrix(cfg.sensing, m, n, derive_seed(cfg.seed, &[stream::SENSING, side as u64]))?;
    let mut rng = stream_rng(derive_seed(cfg.seed, &[stream::TRIALS, side as u64]), 0);
    let x0 = Array1::from_shape_fn(n, |_| rng.random_range(0.2..1.0));
    let (sw, sz) = (cfg.sigma_w / 2f64.sqrt(), cfg.sigma_z / 2f64.sqrt());
    let previous = exact_inverse(&assemble_b(x0.view(), &a, sw, sz)?)?;
    let mut exact = Vec::with_capacity(repeats);
    let mut tracked = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let x = x0.mapv(|v| v + rng.random_range(-0.01..0.01));
        let t = Instant::now();
        let inv = exact_inverse(&assemble_b(x.view(), &a, sw, sz)?)?;
        exact.push(t.elapsed().as_secs_f64());
        std::hint::black_box(&inv);
        let t = Instant::now();
        let inv = newton_schulz_step(&assemble_b(x.view(), &a, sw, sz)?, &previous)?;
        tracked.push(t.elapsed().as_secs_f64());
        std::hint::black_box(&inv);
    }
    Ok(Timing {
        side,
        m,
        repeats,
        exact_seconds: median(&exact),
        tracked_seconds: median(&tracked),
    })
}

#[derive(Debug, Serialize)]
struct Row {
    iter: usize,
    tracked: f64,
    exact: f64,
    #[serde(flatten)]
    frozen: std::collections::BTreeMap<String, Option<f64>>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Value> {
    let scene = load_scene(cfg)?;
    if scene.height() != scene.width() && cfg.scene.is_none() {
        return Err(config_err("phantom scenes are square"));
    }
    let iters = cfg.outer_iters.unwrap_or(50);
    let ens = measurements(cfg, &scene, cfg.m_over_n, cfg.looks, cfg.seed)?;
    let pgd = pgd_config(cfg, scene.height(), scene.width(), cfg.looks, cfg.m_over_n, cfg.seed)?;
    let (tracked, branches) = tracked_and_frozen(&ens, &scene, &pgd, iters, &cfg.freeze_at, cfg.freeze_window)?;
    let exact = exact_run(&ens, &scene, &pgd, iters)?;
    let timing = if cfg.timing_repeats > 0 {
        Some(time_updates(cfg, cfg.timing_side, cfg.timing_repeats)?)
    } else {
        None
    };

    let horizon = tracked.len();
    let rows: Vec<Row> = (0..horizon)
        .map(|t| Row {
            iter: t + 1,
            tracked: tracked[t],
            exact: exact.get(t).copied().unwrap_or(f64::NAN),
            frozen: branches
                .iter()
                .map(|b| {
                    let v = t.checked_sub(b.freeze_at).and_then(|i| b.psnr.get(i).copied());
                    (format!("frozen_{}", b.freeze_at), v)
                })
                .collect(),
        })
        .collect();
    let out = OutDir::create(&cfg.out_dir)?;
    out.csv("ns_compare.csv", &rows)?;
    if let Some(t) = &timing {
        out.csv("timing.csv", &[*t])?;
    }

    let max_gap = tracked.iter().zip(exact.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let drops: Vec<Value> = branches
        .iter()
        .map(|b| {
            let worst = b
                .psnr
                .iter()
                .enumerate()
                .map(|(i, p)| tracked[b.freeze_at + i] - p)
                .fold(f64::NEG_INFINITY, f64::max);
            json!({"freeze_at": b.freeze_at, "max_drop_db": worst})
        })
        .collect();
    let results = json!({
        "iterations": iters,
        "max_tracked_exact_gap_db": max_gap,
        "frozen": drops,
        "timing": timing,
    });
    out.report(cfg, results.clone())?;
    Ok(results)
}
