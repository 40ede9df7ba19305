//! Convergence of Newton-Schulz refinement after a ±δ jump of every pixel.
//!
//! The sensing matrix is drawn once per study. Trials are spread over
//! `threshold_scenes` uniform random scenes; each trial draws one sign
//! pattern which is reused for every δ.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};
use speckle_core::cxla::{assemble_b, defect_norm, exact_inverse, newton_schulz_step, ComplexMat};
use speckle_core::sensing::{derive_seed, haar_partial, stream_rng, Scene, DEFAULT_X_MIN};

use crate::config::{ExperimentConfig, ThresholdMethod};
use crate::error::Result;
use crate::output::OutDir;
use crate::problem::{measurement_count, stream};
use crate::spectral::{classify_top_eigenvalues, Verdict, WhitenedSensing};

/// Residual level treated as converged by the direct method, per unit of `√(2m)`.
pub const DIRECT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub delta: f64,
    pub scene: usize,
    pub trial: usize,
    /// Top eigenvalue of `C⁻¹B` (spectral method only).
    pub lambda_max: Option<f64>,
    pub residual_bound: Option<f64>,
    pub iterations: usize,
    pub outcome: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdRow {
    pub delta: f64,
    pub trials: usize,
    pub successes: usize,
    pub undecided: usize,
    pub success_rate: f64,
    pub lambda_min: Option<f64>,
    pub lambda_mean: Option<f64>,
    pub lambda_max: Option<f64>,
}

/// Runs `steps` Newton-Schulz steps on `B = A (x+Δ)² Aᴴ` from `(A x² Aᴴ)⁻¹`.
/// Succeeds when the residual `‖I − M_k B‖` decreases at every step until
/// it reaches the floor. Returns the verdict and the residuals.
pub fn newton_schulz_converges(
    a: &ComplexMat,
    x: &Array1<f64>,
    perturbed: &Array1<f64>,
    steps: usize,
) -> Result<(bool, Vec<f64>)> {
    let b = assemble_b(perturbed.view(), a, 1.0, 0.0)?;
    let mut m = exact_inverse(&assemble_b(x.view(), a, 1.0, 0.0)?)?;
    let floor = DIRECT_FLOOR * ((2 * a.rows()) as f64).sqrt();
    let mut residuals = vec![defect_norm(&b, &m)?];
    for _ in 0..steps {
        let prev = *residuals.last().expect("non-empty");
        if prev <= floor {
            break;
        }
        m = newton_schulz_step(&b, &m)?;
        let r = defect_norm(&b, &m)?;
        residuals.push(r);
        if !(r < prev) {
            return Ok((false, residuals));
        }
    }
    Ok((true, residuals))
}

/// Trials assigned to each scene: `trials` split as evenly as possible.
fn trials_per_scene(trials: usize, scenes: usize) -> Vec<usize> {
    (0..scenes).map(|s| trials / scenes + usize::from(s < trials % scenes)).collect()
}

pub fn study(cfg: &ExperimentConfig) -> Result<(Vec<ThresholdRow>, Vec<TrialRecord>)> {
    let side = cfg.threshold_side;
    let n = side * side;
    let m = measurement_count(n, cfg.m_over_n);
    let a = haar_partial(m, n, derive_seed(cfg.seed, &[stream::SENSING]))?;
    let mut records = Vec::new();
    for (s, &count) in trials_per_scene(cfg.trials, cfg.threshold_scenes).iter().enumerate() {
        let scene_seed = derive_seed(cfg.seed, &[stream::TRIALS, s as u64]);
        let x = Scene::uniform_random(side, side, DEFAULT_X_MIN, scene_seed)?.pixels().clone();
        let signs: Vec<Array1<f64>> = (0..count)
            .map(|t| {
                let mut rng = stream_rng(derive_seed(scene_seed, &[t as u64]), 0);
                Array1::from_shape_fn(n, |_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            })
            .collect();
        match cfg.threshold_method {
            ThresholdMethod::Spectral => {
                let op = WhitenedSensing::new(&a, x.view())?;
                for &delta in &cfg.deltas {
                    let weights = Array2::from_shape_fn((n, count), |(i, t)| (x[i] + delta * signs[t][i]).powi(2));
                    let tops = classify_top_eigenvalues(
                        &op,
                        weights.view(),
                        2.0,
                        cfg.lanczos_max_iter,
                        derive_seed(scene_seed, &[delta.to_bits()]),
                    )?;
                    for (t, top) in tops.into_iter().enumerate() {
                        records.push(TrialRecord {
                            delta,
                            scene: s,
                            trial: t,
                            lambda_max: Some(top.value),
                            residual_bound: Some(top.residual),
                            iterations: top.iterations,
                            outcome: top.verdict,
                        });
                    }
                    log::info!("scene {s} delta {delta}: done");
                }
            }
            ThresholdMethod::Direct => {
                for &delta in &cfg.deltas {
                    for (t, sg) in signs.iter().enumerate() {
                        let perturbed = &x + &(sg * delta);
                        let (ok, res) = newton_schulz_converges(&a, &x, &perturbed, cfg.ns_steps)?;
                        records.push(TrialRecord {
                            delta,
                            scene: s,
                            trial: t,
                            lambda_max: None,
                            residual_bound: None,
                            iterations: res.len() - 1,
                            outcome: if ok { Verdict::Below } else { Verdict::Above },
                        });
                    }
                }
            }
        }
    }
    Ok((summarize(&records), records))
}

/// One row per δ, in increasing order.
pub fn summarize(records: &[TrialRecord]) -> Vec<ThresholdRow> {
    let mut by_delta: BTreeMap<u64, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        by_delta.entry(r.delta.to_bits()).or_default().push(r);
    }
    let mut rows: Vec<ThresholdRow> = by_delta
        .into_values()
        .map(|rs| {
            let lambdas: Vec<f64> = rs.iter().filter_map(|r| r.lambda_max).collect();
            let successes = rs.iter().filter(|r| r.outcome == Verdict::Below).count();
            ThresholdRow {
                delta: rs[0].delta,
                trials: rs.len(),
                successes,
                undecided: rs.iter().filter(|r| r.outcome == Verdict::Undecided).count(),
                success_rate: successes as f64 / rs.len() as f64,
                lambda_min: lambdas.iter().copied().reduce(f64::min),
                lambda_mean: (!lambdas.is_empty()).then(|| lambdas.iter().sum::<f64>() / lambdas.len() as f64),
                lambda_max: lambdas.iter().copied().reduce(f64::max),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    rows
}

pub fn run(cfg: &ExperimentConfig) -> Result<Value> {
    let (rows, records) = study(cfg)?;
    let out = OutDir::create(&cfg.out_dir)?;
    out.csv("threshold.csv", &rows)?;
    out.csv("threshold_trials.csv", &records)?;
    let results = json!({
        "n": cfg.threshold_side * cfg.threshold_side,
        "rows": serde_json::to_value(&rows)?,
    });
    out.report(cfg, results.clone())?;
    Ok(results)
}
