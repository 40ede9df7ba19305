//! Scenes, measurements and solver settings built from a configuration.

use speckle_core::bagging::BaggingPlan;
use speckle_core::cxla::ComplexMat;
use speckle_core::decoder::DecoderArch;
use speckle_core::pgd::{default_outer_iters, PgdConfig, ProjectionMode};
use speckle_core::sensing::{derive_seed, haar_partial, simulate, MeasurementEnsemble, Scene, DEFAULT_X_MIN};

use crate::config::{ExperimentConfig, Sensing};
use crate::error::{config_err, Result};

/// Seed-derivation labels, one per source of randomness.
pub mod stream {
    pub const SCENE: u64 = 0;
    pub const SENSING: u64 = 1;
    pub const LOOKS: u64 = 2;
    pub const DECODER: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const TRIALS: u64 = 5;
}

/// The configured scene, or a phantom of side `size` seeded by `seed`.
pub fn load_scene(cfg: &ExperimentConfig) -> Result<Scene> {
    match &cfg.scene {
        Some(path) => Scene::load(path, DEFAULT_X_MIN)
            .map_err(|e| config_err(format!("cannot load scene {}: {e}", path.display()))),
        None => Ok(Scene::phantom(cfg.size, cfg.size, derive_seed(cfg.seed, &[stream::SCENE]))?),
    }
}

/// Number of measurements for `n` pixels at ratio `m_over_n`.
pub fn measurement_count(n: usize, m_over_n: f64) -> usize {
    ((m_over_n * n as f64).round() as usize).clamp(1, n)
}

pub fn sensing_matrix(sensing: Sensing, m: usize, n: usize, seed: u64) -> Result<ComplexMat> {
    match sensing {
        Sensing::Haar => Ok(haar_partial(m, n, seed)?),
        Sensing::Identity if m == n => Ok(ComplexMat::identity(n)),
        Sensing::Identity => Err(config_err("identity sensing needs m_over_n = 1")),
    }
}

/// Sensing matrix and `looks` looks of `scene` for one run seed.
pub fn measurements(
    cfg: &ExperimentConfig,
    scene: &Scene,
    m_over_n: f64,
    looks: usize,
    run_seed: u64,
) -> Result<MeasurementEnsemble> {
    let n = scene.len();
    let a = sensing_matrix(cfg.sensing, measurement_count(n, m_over_n), n, derive_seed(run_seed, &[stream::SENSING]))?;
    Ok(simulate(
        scene.pixels().view(),
        &a,
        looks,
        cfg.sigma_w,
        cfg.sigma_z,
        derive_seed(run_seed, &[stream::LOOKS]),
    )?)
}

/// Solver settings for an `height × width` image with `looks` looks.
pub fn pgd_config(
    cfg: &ExperimentConfig,
    height: usize,
    width: usize,
    looks: usize,
    m_over_n: f64,
    run_seed: u64,
) -> Result<PgdConfig> {
    let iters = cfg.outer_iters.unwrap_or_else(|| default_outer_iters(m_over_n));
    let seed = derive_seed(run_seed, &[stream::DECODER]);
    let mut pgd = match cfg.projection {
        ProjectionMode::Bagged => {
            let arch = DecoderArch::new([cfg.channels; 4], cfg.kernel, 8, 8)?;
            let plan = BaggingPlan::from_sides(height, width, &cfg.patch_sizes, cfg.budgets.as_deref(), arch, seed)?
                .with_lr(cfg.lr)?;
            PgdConfig::bagged(plan, iters, seed)
        }
        mode => {
            let budget = cfg.budgets.as_ref().map(|b| b[0]);
            let mut pgd = PgdConfig::single_decoder(mode, height, width, looks, budget, iters, seed)?;
            pgd.plan = pgd.plan.with_lr(cfg.lr)?;
            pgd
        }
    };
    pgd.mu = cfg.mu;
    pgd.delta_threshold = cfg.delta_x;
    if let Some(l) = cfg.lambda {
        pgd.lambda = l;
    }
    pgd.validate()?;
    Ok(pgd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Experiment;

    #[test]
    fn counts_and_configs() {
        assert_eq!(measurement_count(4096, 0.5), 2048);
        assert_eq!(measurement_count(10, 1e-6), 1);
        assert_eq!(measurement_count(10, 1.0), 10);

        let mut cfg = ExperimentConfig::defaults(Experiment::Reconstruct);
        cfg.size = 32;
        cfg.patch_sizes = vec![16, 32];
        cfg.budgets = Some(vec![3, 4]);
        cfg.outer_iters = None;
        let pgd = pgd_config(&cfg, 32, 32, 50, 0.25, 1).unwrap();
        assert_eq!(pgd.outer_iters, 200);
        assert_eq!(pgd.plan.scales().len(), 2);
        assert_eq!(pgd.plan.arch().channels, [64; 4]);

        cfg.projection = ProjectionMode::DipM3;
        let pgd = pgd_config(&cfg, 32, 32, 25, 0.5, 1).unwrap();
        assert_eq!(pgd.lambda, 0.3);
        assert_eq!(pgd.plan.scales()[0].budget, 3);
        cfg.lambda = Some(0.5);
        assert_eq!(pgd_config(&cfg, 32, 32, 25, 0.5, 1).unwrap().lambda, 0.5);
    }

    #[test]
    fn identity_sensing_needs_square() {
        assert!(sensing_matrix(Sensing::Identity, 3, 4, 0).is_err());
        assert_eq!(sensing_matrix(Sensing::Identity, 4, 4, 0).unwrap(), ComplexMat::identity(4));
    }
}
