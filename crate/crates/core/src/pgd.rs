//! Projected gradient descent on the multilook likelihood.
//!
//! Each outer iteration refreshes the tracked covariance inverse at the
//! current estimate, takes a gradient step, clips to `[x_min, 1]`, projects
//! with the (bagged) deep decoder and optionally blends the projection with
//! the gradient iterate.

use std::time::Instant;

use ndarray::{Array1, ArrayView1};

use crate::bagging::{bagged_project, BaggingPlan};
use crate::decoder::{default_budget, DecoderArch};
use crate::error::{Error, Result};
use crate::invtrack::{InversePolicy, InverseTracker, UpdateKind, DEFAULT_DELTA_THRESHOLD};
use crate::likelihood::{eval_fl, grad_fl};
use crate::metrics::MetricReport;
use crate::sensing::{derive_seed, init_estimate, MeasurementEnsemble, DEFAULT_X_MIN};

pub const DEFAULT_MU: f64 = 0.01;

/// Which prior performs the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Average of decoders fitted on several patch tilings.
    Bagged,
    /// One kernel-1 decoder over the whole image.
    DipSimple,
    /// [`ProjectionMode::DipSimple`] blended with the gradient iterate.
    DipM3,
}

impl std::str::FromStr for ProjectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bagged" => Ok(Self::Bagged),
            "dip-simple" => Ok(Self::DipSimple),
            "dip-m3" => Ok(Self::DipM3),
            other => Err(Error::Validation(format!(
                "unknown projection mode {other:?} (expected bagged, dip-simple or dip-m3)"
            ))),
        }
    }
}

impl std::fmt::Display for ProjectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Bagged => "bagged",
            Self::DipSimple => "dip-simple",
            Self::DipM3 => "dip-m3",
        })
    }
}

/// Outer iterations used for a sampling ratio: 100, 200 and 300 for
/// `m/n` = 0.5, 0.25 and 0.125; ratios in between round to the nearest.
pub fn default_outer_iters(m_over_n: f64) -> usize {
    let halvings = (-m_over_n.max(1e-9).log2()).round().max(1.0);
    (100.0 * halvings) as usize
}

/// Blend weight of the projection for the residual baseline: 0.3, 0.2 and
/// 0.1 for 25, 50 and 100 looks.
pub fn residual_lambda(looks: usize) -> f64 {
    match looks {
        0..=37 => 0.3,
        38..=75 => 0.2,
        _ => 0.1,
    }
}

#[derive(Debug, Clone)]
pub struct PgdConfig {
    pub outer_iters: usize,
    /// Gradient step size.
    pub mu: f64,
    /// Weight of the projection in `x_t = λ·x_P + (1 − λ)·x_G`.
    pub lambda: f64,
    pub delta_threshold: f64,
    pub plan: BaggingPlan,
    pub mode: ProjectionMode,
    pub seed: u64,
    pub inverse_policy: InversePolicy,
    pub x_min: f64,
    /// Evaluate the likelihood at every iterate (one extra factorization).
    pub record_likelihood: bool,
    /// Record the Newton-Schulz residual of the tracked inverse.
    pub record_residual: bool,
}

impl PgdConfig {
    /// Bagged projection with the default step, threshold and blend.
    pub fn bagged(plan: BaggingPlan, outer_iters: usize, seed: u64) -> Self {
        Self {
            outer_iters,
            mu: DEFAULT_MU,
            lambda: 1.0,
            delta_threshold: DEFAULT_DELTA_THRESHOLD,
            plan,
            mode: ProjectionMode::Bagged,
            seed,
            inverse_policy: InversePolicy::Tracked,
            x_min: DEFAULT_X_MIN,
            record_likelihood: false,
            record_residual: false,
        }
    }

    /// Whole-image kernel-1 decoder with channels `[100, 50, 25, 10]`; for
    /// [`ProjectionMode::DipM3`] the blend weight follows the number of looks.
    pub fn single_decoder(
        mode: ProjectionMode,
        height: usize,
        width: usize,
        looks: usize,
        budget: Option<usize>,
        outer_iters: usize,
        seed: u64,
    ) -> Result<Self> {
        let lambda = match mode {
            ProjectionMode::Bagged => {
                return Err(Error::Validation("single_decoder needs dip-simple or dip-m3".into()));
            }
            ProjectionMode::DipSimple => 1.0,
            ProjectionMode::DipM3 => residual_lambda(looks),
        };
        let arch = DecoderArch::simple(height, width)?;
        let budget = budget.unwrap_or_else(|| default_budget(height.max(width)));
        let plan = BaggingPlan::whole_image(height, width, arch, budget, seed)?;
        Ok(Self {
            lambda,
            mode,
            ..Self::bagged(plan, outer_iters, seed)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Validation(format!("mu must be positive, got {}", self.mu)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Validation(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.delta_threshold > 0.0) {
            return Err(Error::Validation(format!(
                "delta threshold must be positive, got {}",
                self.delta_threshold
            )));
        }
        if !(self.x_min > 0.0 && self.x_min < 1.0) {
            return Err(Error::Validation(format!("x_min must lie in (0, 1), got {}", self.x_min)));
        }
        if self.mode != ProjectionMode::Bagged {
            let (h, w) = self.plan.image_dims();
            let s = self.plan.scales();
            if s.len() != 1 || (s[0].height, s[0].width) != (h, w) {
                return Err(Error::Validation(format!("{} projection needs a single whole-image plan", self.mode)));
            }
        }
        Ok(())
    }
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub likelihood: Option<f64>,
    pub residual: Option<f64>,
    pub update: UpdateKind,
    pub exact_inversions: usize,
    pub ns_steps: usize,
    /// Wall time since the start of [`iterate`].
    pub seconds: f64,
}

/// Ground truth for per-iteration metrics.
#[derive(Debug, Clone, Copy)]
pub struct Reference<'a> {
    pub pixels: ArrayView1<'a, f64>,
    pub height: usize,
    pub width: usize,
}

/// Current estimate, tracked inverse and trace.
#[derive(Debug, Clone)]
pub struct ReconState {
    x: Array1<f64>,
    tracker: InverseTracker,
    iteration: usize,
    trace: Vec<TraceRow>,
    x_min: f64,
}

fn clip(x: &mut Array1<f64>, lo: f64) {
    x.mapv_inplace(|v| if v.is_nan() { lo } else { v.clamp(lo, 1.0) });
}

impl ReconState {
    /// Starts from `x0`, clipped into `[x_min, 1]`.
    pub fn new(mut x0: Array1<f64>, config: &PgdConfig) -> Result<Self> {
        config.validate()?;
        let (h, w) = config.plan.image_dims();
        if x0.len() != h * w {
            return Err(Error::dim("ReconState initial estimate", h * w, x0.len()));
        }
        clip(&mut x0, config.x_min);
        let tracker = InverseTracker::new(config.delta_threshold)?.with_policy(config.inverse_policy);
        Ok(Self {
            x: x0,
            tracker,
            iteration: 0,
            trace: Vec::new(),
            x_min: config.x_min,
        })
    }

    /// Starts from `(1/L) Σ |Aᴴ y_ℓ|`.
    pub fn from_ensemble(ens: &MeasurementEnsemble, config: &PgdConfig) -> Result<Self> {
        Self::new(init_estimate(ens, config.x_min), config)
    }

    pub fn x(&self) -> &Array1<f64> {
        &self.x
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn tracker(&self) -> &InverseTracker {
        &self.tracker
    }

    /// Replaces the inverse-update policy, keeping the current inverse.
    pub fn set_inverse_policy(&mut self, policy: InversePolicy) {
        self.tracker = self.tracker.clone().with_policy(policy);
    }
}

/// Refreshes the tracked inverse at the current estimate and returns the
/// clipped gradient iterate together with the kind of inverse update.
pub fn gradient_step(state: &mut ReconState, ens: &MeasurementEnsemble, mu: f64) -> Result<(Array1<f64>, UpdateKind)> {
    let (sw, sz) = ens.component_sigmas();
    let (inv, kind) = state.tracker.update(state.x.view(), ens.a(), sw, sz)?;
    let grad = grad_fl(state.x.view(), inv, ens)?;
    let mut xg = &state.x - &(grad * mu);
    clip(&mut xg, state.x_min);
    Ok((xg, kind))
}

/// Decoder projection of `xg` for outer iteration `iteration`, floored at `x_min`.
pub fn project_step(xg: ArrayView1<f64>, config: &PgdConfig, iteration: usize) -> Result<Array1<f64>> {
    let plan = config.plan.reseeded(derive_seed(config.seed, &[iteration as u64]));
    let mut xp = bagged_project(xg, &plan)?.average;
    xp.mapv_inplace(|v| v.max(config.x_min));
    Ok(xp)
}

/// One full outer iteration; appends a trace row.
pub fn step(
    state: &mut ReconState,
    ens: &MeasurementEnsemble,
    config: &PgdConfig,
    reference: Option<Reference>,
    started: Instant,
) -> Result<()> {
    let t = state.iteration + 1;
    let (xg, update) = gradient_step(state, ens, config.mu)?;
    let residual = if config.record_residual {
        let (sw, sz) = ens.component_sigmas();
        Some(state.tracker.residual(state.x.view(), ens.a(), sw, sz)?)
    } else {
        None
    };
    let mut next = if config.lambda == 0.0 {
        xg
    } else {
        let xp = project_step(xg.view(), config, t)?;
        if config.lambda == 1.0 {
            xp
        } else {
            xp * config.lambda + xg * (1.0 - config.lambda)
        }
    };
    clip(&mut next, state.x_min);
    state.x = next;
    state.iteration = t;
    let metrics = reference
        .map(|r| MetricReport::compute(state.x.view(), r.pixels, r.height, r.width))
        .transpose()?;
    let likelihood = if config.record_likelihood {
        Some(crate::likelihood::eval_fl_exact(state.x.view(), ens)?)
    } else {
        None
    };
    state.trace.push(TraceRow {
        iter: t,
        psnr: metrics.map(|m| m.psnr_db),
        ssim: metrics.map(|m| m.ssim),
        likelihood,
        residual,
        update,
        exact_inversions: state.tracker.exact_count(),
        ns_steps: state.tracker.ns_count(),
        seconds: started.elapsed().as_secs_f64(),
    });
    Ok(())
}

/// Runs `config.outer_iters` iterations; on failure the state keeps the
/// trace up to the failing iteration.
pub fn iterate(
    state: &mut ReconState,
    ens: &MeasurementEnsemble,
    config: &PgdConfig,
    reference: Option<Reference>,
) -> Result<Array1<f64>> {
    iterate_observed(state, ens, config, reference, |_| {})
}

/// [`iterate`] with a callback after every iteration.
pub fn iterate_observed(
    state: &mut ReconState,
    ens: &MeasurementEnsemble,
    config: &PgdConfig,
    reference: Option<Reference>,
    mut observer: impl FnMut(&TraceRow),
) -> Result<Array1<f64>> {
    config.validate()?;
    if state.x.len() != ens.n() {
        return Err(Error::dim("pgd estimate", ens.n(), state.x.len()));
    }
    let started = Instant::now();
    for _ in 0..config.outer_iters {
        step(state, ens, config, reference, started)?;
        let row = state.trace.last().expect("pushed by step");
        log::debug!(
            "iter {} psnr {:?} update {:?} ({:.1}s)",
            row.iter,
            row.psnr,
            row.update,
            row.seconds
        );
        observer(row);
    }
    Ok(state.x.clone())
}

/// Likelihood of the current estimate using the tracked inverse.
pub fn tracked_likelihood(state: &ReconState, ens: &MeasurementEnsemble) -> Result<f64> {
    let inv = state
        .tracker
        .current()
        .ok_or_else(|| Error::Usage("no tracked inverse before the first iteration".into()))?;
    eval_fl(state.x.view(), inv, ens)
}
