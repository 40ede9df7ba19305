//! Flat `key = value` experiment configuration.
//!
//! Values are layered: built-in defaults for the experiment (desk or paper
//! scale), then a config file, then command-line overrides. Lists are
//! comma-separated; `#` starts a comment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Serialize, Serializer};
use speckle_core::pgd::ProjectionMode;

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Reconstruct,
    NsCompare,
    ThresholdStudy,
    ScalingStudy,
    OverfitStudy,
    Metrics,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Self::Simulate,
        Self::Reconstruct,
        Self::NsCompare,
        Self::ThresholdStudy,
        Self::ScalingStudy,
        Self::OverfitStudy,
        Self::Metrics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Reconstruct => "reconstruct",
            Self::NsCompare => "ns-compare",
            Self::ThresholdStudy => "threshold-study",
            Self::ScalingStudy => "scaling-study",
            Self::OverfitStudy => "overfit-study",
            Self::Metrics => "metrics",
        }
    }
}

impl FromStr for Experiment {
    type Err = crate::error::HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| config_err(format!("unknown experiment {s:?}")))
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Measurement operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sensing {
    /// First `m` rows of a random unitary matrix.
    Haar,
    /// `A = I`; requires `m_over_n = 1`.
    Identity,
}

/// How the threshold study decides convergence of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMethod {
    /// Largest eigenvalue of the whitened perturbed covariance by Lanczos.
    Spectral,
    /// Newton-Schulz steps on the dense covariance, watching the residual.
    Direct,
}

/// A decoder configuration of the overfitting study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Preset {
    pub kernel: usize,
    pub channels: [usize; 4],
}

impl Preset {
    pub const SMALL: [usize; 4] = [100, 50, 25, 10];
    pub const WIDE: [usize; 4] = [128; 4];

    pub fn all() -> Vec<Preset> {
        let mut out = Vec::new();
        for kernel in [1, 3] {
            for channels in [Self::SMALL, Self::WIDE] {
                out.push(Preset { kernel, channels });
            }
        }
        out
    }

    /// `k<kernel>-small` or `k<kernel>-wide`.
    pub fn label(&self) -> String {
        let width = if self.channels == Self::WIDE { "wide" } else { "small" };
        format!("k{}-{width}", self.kernel)
    }
}

impl FromStr for Preset {
    type Err = crate::error::HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::all()
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| config_err(format!("unknown decoder preset {s:?} (expected k1-small, k1-wide, k3-small or k3-wide)")))
    }
}

fn display<T: fmt::Display, S: Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn labels<S: Serializer>(v: &[Preset], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(Preset::label))
}

/// Every knob of every experiment; unused keys are ignored by the others.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Scene image (PNG/PGM); a synthetic phantom of side `size` when unset.
    pub scene: Option<PathBuf>,
    /// Saved measurement ensemble to reconstruct from instead of simulating.
    pub ensemble: Option<PathBuf>,
    pub size: usize,
    pub m_over_n: f64,
    #[serde(rename = "L")]
    pub looks: usize,
    pub sigma_w: f64,
    pub sigma_z: f64,
    pub sensing: Sensing,
    pub mu: f64,
    /// Blend weight of the projection; the mode's default when unset.
    pub lambda: Option<f64>,
    pub delta_x: f64,
    #[serde(serialize_with = "display")]
    pub projection: ProjectionMode,
    pub patch_sizes: Vec<usize>,
    /// Adam steps per patch size; 200/300/400 by side when unset.
    pub budgets: Option<Vec<usize>>,
    pub channels: usize,
    pub kernel: usize,
    pub lr: f64,
    /// 100/200/300 for m/n = 0.5/0.25/0.125 when unset.
    pub outer_iters: Option<usize>,
    pub seed: u64,
    /// Number of seeds for multi-seed studies.
    pub seeds: usize,
    pub out_dir: PathBuf,
    pub trials: usize,
    pub deltas: Vec<f64>,
    pub threshold_side: usize,
    pub threshold_scenes: usize,
    pub threshold_method: ThresholdMethod,
    pub ns_steps: usize,
    pub lanczos_max_iter: usize,
    pub grid_m_over_n: Vec<f64>,
    pub grid_looks: Vec<usize>,
    pub freeze_at: Vec<usize>,
    /// Iterations simulated after each freeze point.
    pub freeze_window: usize,
    pub timing_side: usize,
    pub timing_repeats: usize,
    pub fit_iters: usize,
    pub noise_sigma: f64,
    #[serde(serialize_with = "labels")]
    pub presets: Vec<Preset>,
    pub estimate: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub paper_scale: bool,
}

impl ExperimentConfig {
    /// Desk-scale defaults, with the setups of the individual studies.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut cfg = Self {
            experiment,
            scene: None,
            ensemble: None,
            size: 64,
            m_over_n: 0.5,
            looks: 50,
            sigma_w: 1.0,
            sigma_z: 0.0,
            sensing: Sensing::Haar,
            mu: speckle_core::pgd::DEFAULT_MU,
            lambda: None,
            delta_x: speckle_core::invtrack::DEFAULT_DELTA_THRESHOLD,
            projection: ProjectionMode::Bagged,
            patch_sizes: vec![32, 64],
            budgets: Some(vec![100, 150]),
            channels: 64,
            kernel: 3,
            lr: speckle_core::decoder::DEFAULT_LEARNING_RATE,
            outer_iters: None,
            seed: 0,
            seeds: 3,
            out_dir: PathBuf::from("out"),
            trials: 100,
            deltas: vec![0.10, 0.11, 0.12, 0.13, 0.14, 0.15],
            threshold_side: 64,
            threshold_scenes: 4,
            threshold_method: ThresholdMethod::Spectral,
            ns_steps: 20,
            lanczos_max_iter: 300,
            grid_m_over_n: vec![0.125, 0.25, 0.5],
            grid_looks: vec![25, 50, 100],
            freeze_at: vec![5, 10, 20],
            freeze_window: 30,
            timing_side: 64,
            timing_repeats: 5,
            fit_iters: 2000,
            noise_sigma: 25.0 / 255.0,
            presets: Preset::all(),
            estimate: None,
            reference: None,
            paper_scale: false,
        };
        if experiment == Experiment::NsCompare {
            cfg.size = 32;
            cfg.patch_sizes = vec![32];
            cfg.budgets = Some(vec![50]);
            cfg.channels = 128;
            cfg.outer_iters = Some(50);
        }
        cfg
    }

    /// The full-size setup: 128×128 scenes, 128-channel decoders on
    /// 32/64/128 tiles with 200/300/400 steps.
    pub fn paper_defaults(experiment: Experiment) -> Self {
        let mut cfg = Self::defaults(experiment);
        cfg.paper_scale = true;
        cfg.size = 128;
        cfg.channels = 128;
        cfg.patch_sizes = speckle_core::bagging::DEFAULT_PATCH_SIDES.to_vec();
        cfg.budgets = None;
        cfg.threshold_side = 128;
        cfg.timing_side = 128;
        if experiment == Experiment::NsCompare {
            cfg.size = 32;
            cfg.patch_sizes = vec![32];
            cfg.budgets = None;
            cfg.outer_iters = Some(50);
        }
        cfg
    }

    /// Applies `key = value` lines. The `experiment` key, if present, must
    /// agree with the experiment being run.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value, got {line:?}", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| config_err(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Applies one `KEY=VALUE` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| config_err(format!("override {assignment:?} is not KEY=VALUE")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => {
                let e: Experiment = value.parse()?;
                if e != self.experiment {
                    return Err(config_err(format!(
                        "config is for {e} but the {} subcommand was invoked",
                        self.experiment
                    )));
                }
            }
            "scene" => self.scene = optional_path(value),
            "ensemble" => self.ensemble = optional_path(value),
            "size" => self.size = parse(key, value)?,
            "m_over_n" => self.m_over_n = parse(key, value)?,
            "L" | "looks" => self.looks = parse(key, value)?,
            "sigma_w" => self.sigma_w = parse(key, value)?,
            "sigma_z" => self.sigma_z = parse(key, value)?,
            "sensing" => {
                self.sensing = match value {
                    "haar" => Sensing::Haar,
                    "identity" => Sensing::Identity,
                    _ => return Err(config_err(format!("sensing must be haar or identity, got {value:?}"))),
                }
            }
            "mu" => self.mu = parse(key, value)?,
            "lambda" => self.lambda = optional(key, value)?,
            "delta_x" => self.delta_x = parse(key, value)?,
            "projection" => self.projection = value.parse().map_err(|e: speckle_core::Error| config_err(e.to_string()))?,
            "patch_sizes" => self.patch_sizes = list(key, value)?,
            "budgets" => self.budgets = if is_unset(value) { None } else { Some(list(key, value)?) },
            "channels" => self.channels = parse(key, value)?,
            "kernel" => self.kernel = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "outer_iters" => self.outer_iters = optional(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "seeds" => self.seeds = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "trials" => self.trials = parse(key, value)?,
            "deltas" => self.deltas = list(key, value)?,
            "threshold_side" => self.threshold_side = parse(key, value)?,
            "threshold_scenes" => self.threshold_scenes = parse(key, value)?,
            "threshold_method" => {
                self.threshold_method = match value {
                    "spectral" => ThresholdMethod::Spectral,
                    "direct" => ThresholdMethod::Direct,
                    _ => return Err(config_err(format!("threshold_method must be spectral or direct, got {value:?}"))),
                }
            }
            "ns_steps" => self.ns_steps = parse(key, value)?,
            "lanczos_max_iter" => self.lanczos_max_iter = parse(key, value)?,
            "grid_m_over_n" => self.grid_m_over_n = list(key, value)?,
            "grid_looks" | "grid_L" => self.grid_looks = list(key, value)?,
            "freeze_at" => self.freeze_at = list(key, value)?,
            "freeze_window" => self.freeze_window = parse(key, value)?,
            "timing_side" => self.timing_side = parse(key, value)?,
            "timing_repeats" => self.timing_repeats = parse(key, value)?,
            "fit_iters" => self.fit_iters = parse(key, value)?,
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "presets" => {
                self.presets = value
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<Result<Vec<Preset>>>()?
            }
            "estimate" => self.estimate = optional_path(value),
            "reference" => self.reference = optional_path(value),
            _ => return Err(config_err(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Range checks on every numeric field, run before any computation.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(config_err(msg)) };
        check(self.size >= 8 && self.size % 8 == 0, format!("size must be a positive multiple of 8, got {}", self.size))?;
        check(self.m_over_n > 0.0 && self.m_over_n <= 1.0, format!("m_over_n must lie in (0, 1], got {}", self.m_over_n))?;
        check(self.looks >= 1, "L must be at least 1".into())?;
        check(self.sigma_w >= 0.0 && self.sigma_w.is_finite(), format!("sigma_w must be non-negative, got {}", self.sigma_w))?;
        check(self.sigma_z >= 0.0 && self.sigma_z.is_finite(), format!("sigma_z must be non-negative, got {}", self.sigma_z))?;
        check(self.mu > 0.0 && self.mu.is_finite(), format!("mu must be positive, got {}", self.mu))?;
        if let Some(l) = self.lambda {
            check((0.0..=1.0).contains(&l), format!("lambda must lie in [0, 1], got {l}"))?;
        }
        check(self.delta_x > 0.0, format!("delta_x must be positive, got {}", self.delta_x))?;
        check(!self.patch_sizes.is_empty(), "patch_sizes must not be empty".into())?;
        if let Some(b) = &self.budgets {
            check(
                b.len() == self.patch_sizes.len(),
                format!("budgets lists {} values for {} patch sizes", b.len(), self.patch_sizes.len()),
            )?;
        }
        check(self.channels >= 1, "channels must be positive".into())?;
        check(self.kernel == 1 || self.kernel == 3, format!("kernel must be 1 or 3, got {}", self.kernel))?;
        check(self.lr > 0.0 && self.lr.is_finite(), format!("lr must be positive, got {}", self.lr))?;
        check(self.seeds >= 1, "seeds must be at least 1".into())?;
        check(self.trials >= 1, "trials must be at least 1".into())?;
        check(
            self.deltas.iter().all(|d| *d > 0.0 && d.is_finite()),
            "deltas must be positive".into(),
        )?;
        check(
            self.threshold_side >= 2 && self.threshold_side % 2 == 0,
            format!("threshold_side must be even, got {}", self.threshold_side),
        )?;
        check(self.threshold_scenes >= 1 && self.threshold_scenes <= self.trials, "threshold_scenes must lie in [1, trials]".into())?;
        check(self.ns_steps >= 1, "ns_steps must be at least 1".into())?;
        check(self.lanczos_max_iter >= 2, "lanczos_max_iter must be at least 2".into())?;
        check(
            self.grid_m_over_n.iter().all(|r| *r > 0.0 && *r <= 1.0),
            "grid_m_over_n values must lie in (0, 1]".into(),
        )?;
        check(self.grid_looks.iter().all(|&l| l >= 1), "grid_looks values must be positive".into())?;
        check(self.timing_side >= 8 && self.timing_side % 8 == 0, "timing_side must be a multiple of 8".into())?;
        check(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(), "noise_sigma must be non-negative".into())?;
        check(!self.presets.is_empty(), "presets must not be empty".into())?;
        if self.sensing == Sensing::Identity {
            check(self.m_over_n == 1.0, "identity sensing needs m_over_n = 1".into())?;
        }
        Ok(())
    }
}

fn is_unset(value: &str) -> bool {
    value.is_empty() || value == "none" || value == "default"
}

fn optional_path(value: &str) -> Option<PathBuf> {
    if is_unset(value) {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(format!("cannot parse {key} = {value:?}")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if is_unset(value) {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}
