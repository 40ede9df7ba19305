use ndarray::Array1;
use serde::Serialize;
use serde_json::{json, Value};
use speckle_core::invtrack::UpdateKind;
use speckle_core::metrics::MetricReport;
use speckle_core::pgd::{iterate_observed, PgdConfig, ReconState, Reference, TraceRow};
use speckle_core::sensing::{init_estimate, MeasurementEnsemble, Scene};

use crate::config::ExperimentConfig;
use crate::error::{config_err, Result};
use crate::output::OutDir;
use crate::problem::{load_scene, measurements, pgd_config};

#[derive(Debug, Clone)]
pub struct ReconOutcome {
    pub estimate: Array1<f64>,
    pub trace: Vec<TraceRow>,
    pub initial: Option<MetricReport>,
    pub last: Option<MetricReport>,
    pub exact_inversions: usize,
    pub ns_steps: usize,
}

/// One `trace.csv` record.
#[derive(Debug, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub likelihood: Option<f64>,
    pub residual: Option<f64>,
    pub update: &'static str,
    pub exact_inversions: usize,
    pub ns_steps: usize,
    pub seconds: f64,
}

impl From<&TraceRow> for TraceRecord {
    fn from(r: &TraceRow) -> Self {
        Self {
            iter: r.iter,
            psnr: r.psnr,
            ssim: r.ssim,
            likelihood: r.likelihood,
            residual: r.residual,
            update: match r.update {
                UpdateKind::Exact => "exact",
                UpdateKind::NewtonSchulz => "newton-schulz",
                UpdateKind::Frozen => "frozen",
            },
            exact_inversions: r.exact_inversions,
            ns_steps: r.ns_steps,
            seconds: r.seconds,
        }
    }
}

/// Runs PGD from the back-projection estimate; metrics are tracked when a
/// reference scene is given.
pub fn reconstruct(ens: &MeasurementEnsemble, reference: Option<&Scene>, pgd: &PgdConfig) -> Result<ReconOutcome> {
    let mut state = ReconState::from_ensemble(ens, pgd)?;
    let refer = reference.map(|s| Reference {
        pixels: s.pixels().view(),
        height: s.height(),
        width: s.width(),
    });
    let metric = |x: &Array1<f64>| {
        refer
            .map(|r| MetricReport::compute(x.view(), r.pixels, r.height, r.width))
            .transpose()
    };
    let initial = metric(&init_estimate(ens, pgd.x_min))?;
    let estimate = iterate_observed(&mut state, ens, pgd, refer, |row| {
        log::info!("iter {:>4}  psnr {:>7.3}  {:?}  {:.1}s", row.iter, row.psnr.unwrap_or(f64::NAN), row.update, row.seconds);
    })?;
    Ok(ReconOutcome {
        last: metric(&estimate)?,
        initial,
        trace: state.trace().to_vec(),
        exact_inversions: state.tracker().exact_count(),
        ns_steps: state.tracker().ns_count(),
        estimate,
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<Value> {
    let (ens, reference) = match &cfg.ensemble {
        Some(path) => {
            let ens = MeasurementEnsemble::load(path)
                .map_err(|e| config_err(format!("cannot load ensemble {}: {e}", path.display())))?;
            let reference = match &cfg.scene {
                Some(_) => Some(load_scene(cfg)?),
                None => None,
            };
            (ens, reference)
        }
        None => {
            let scene = load_scene(cfg)?;
            (measurements(cfg, &scene, cfg.m_over_n, cfg.looks, cfg.seed)?, Some(scene))
        }
    };
    let (h, w) = match &reference {
        Some(s) => (s.height(), s.width()),
        None => (cfg.size, cfg.size),
    };
    if h * w != ens.n() {
        return Err(config_err(format!("image is {h}x{w} but the ensemble has {} pixels", ens.n())));
    }
    let m_over_n = ens.m() as f64 / ens.n() as f64;
    let pgd = pgd_config(cfg, h, w, ens.num_looks(), m_over_n, cfg.seed)?;
    let outcome = reconstruct(&ens, reference.as_ref(), &pgd)?;

    let out = OutDir::create(&cfg.out_dir)?;
    out.image("estimate", outcome.estimate.view(), h, w)?;
    let rows: Vec<TraceRecord> = outcome.trace.iter().map(TraceRecord::from).collect();
    out.csv("trace.csv", &rows)?;
    let results = json!({
        "height": h,
        "width": w,
        "m": ens.m(),
        "n": ens.n(),
        "looks": ens.num_looks(),
        "outer_iters": pgd.outer_iters,
        "initial": outcome.initial.map(|r| json!({"psnr": r.psnr_db, "ssim": r.ssim, "mse": r.mse})),
        "final": outcome.last.map(|r| json!({"psnr": r.psnr_db, "ssim": r.ssim, "mse": r.mse})),
        "exact_inversions": outcome.exact_inversions,
        "ns_steps": outcome.ns_steps,
        "seconds": outcome.trace.last().map(|r| r.seconds).unwrap_or(0.0),
    });
    out.report(cfg, results.clone())?;
    Ok(results)
}
