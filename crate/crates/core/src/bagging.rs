//! Bagged deep-decoder projection.
//!
//! The image is tiled into non-overlapping patches at several patch sizes.
//! Every patch gets its own freshly initialised decoder, each tiling is put
//! back together, and the per-size estimates are averaged.

use ndarray::{Array1, ArrayView1};

use crate::decoder::{default_budget, fit, DecoderArch, DEFAULT_LEARNING_RATE};
use crate::error::{Error, Result};
use crate::sensing::derive_seed;

pub const DEFAULT_PATCH_SIDES: [usize; 3] = [32, 64, 128];

/// One rectangular tile of an image with its top-left placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Array1<f64>,
}

/// Splits a row-major `height × width` image into `(ph, pw)` tiles,
/// row-major over the tile grid.
pub fn partition(image: ArrayView1<f64>, height: usize, width: usize, size: (usize, usize)) -> Result<Vec<Patch>> {
    let (ph, pw) = size;
    if image.len() != height * width {
        return Err(Error::dim("partition image", height * width, image.len()));
    }
    if ph == 0 || pw == 0 || height % ph != 0 || width % pw != 0 {
        return Err(Error::Validation(format!(
            "patch {ph}x{pw} does not tile a {height}x{width} image"
        )));
    }
    let mut patches = Vec::with_capacity((height / ph) * (width / pw));
    for row in (0..height).step_by(ph) {
        for col in (0..width).step_by(pw) {
            let mut pixels = Array1::zeros(ph * pw);
            for r in 0..ph {
                let src = (row + r) * width + col;
                pixels
                    .slice_mut(ndarray::s![r * pw..(r + 1) * pw])
                    .assign(&image.slice(ndarray::s![src..src + pw]));
            }
            patches.push(Patch {
                row,
                col,
                height: ph,
                width: pw,
                pixels,
            });
        }
    }
    Ok(patches)
}

/// Places tiles back; every pixel must be covered exactly once.
pub fn reassemble(patches: &[Patch], height: usize, width: usize) -> Result<Array1<f64>> {
    let mut out = Array1::zeros(height * width);
    let mut covered = vec![false; height * width];
    for p in patches {
        if p.row + p.height > height || p.col + p.width > width || p.pixels.len() != p.height * p.width {
            return Err(Error::Validation(format!(
                "patch at ({}, {}) of size {}x{} does not fit a {height}x{width} image",
                p.row, p.col, p.height, p.width
            )));
        }
        for r in 0..p.height {
            for c in 0..p.width {
                let idx = (p.row + r) * width + p.col + c;
                if covered[idx] {
                    return Err(Error::Validation(format!("pixel ({}, {}) covered twice", p.row + r, p.col + c)));
                }
                covered[idx] = true;
                out[idx] = p.pixels[r * p.width + c];
            }
        }
    }
    if let Some(idx) = covered.iter().position(|&c| !c) {
        return Err(Error::Validation(format!("pixel ({}, {}) not covered", idx / width, idx % width)));
    }
    Ok(out)
}

/// One tiling of the bagged projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub height: usize,
    pub width: usize,
    /// Adam steps per patch fit.
    pub budget: usize,
}

/// Tilings, decoder shape, optimiser settings and seed of a bagged projection.
#[derive(Debug, Clone, PartialEq)]
pub struct BaggingPlan {
    image_height: usize,
    image_width: usize,
    scales: Vec<Scale>,
    /// Channels and kernel of every patch decoder; its size is replaced per scale.
    arch: DecoderArch,
    lr: f64,
    seed: u64,
}

impl BaggingPlan {
    /// Explicit plan; every scale must tile the image and be a valid decoder size.
    pub fn new(
        image_height: usize,
        image_width: usize,
        scales: Vec<Scale>,
        arch: DecoderArch,
        lr: f64,
        seed: u64,
    ) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Validation("bagging plan needs at least one patch size".into()));
        }
        for (i, s) in scales.iter().enumerate() {
            if s.height == 0 || s.width == 0 || image_height % s.height != 0 || image_width % s.width != 0 {
                return Err(Error::Validation(format!(
                    "patch {}x{} does not tile a {image_height}x{image_width} image",
                    s.height, s.width
                )));
            }
            arch.resized(s.height, s.width)?;
            if scales[..i].iter().any(|o| (o.height, o.width) == (s.height, s.width)) {
                return Err(Error::Validation(format!("patch size {}x{} listed twice", s.height, s.width)));
            }
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Validation(format!("decoder learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            image_height,
            image_width,
            scales,
            arch,
            lr,
            seed,
        })
    }

    /// Square patches of the given sides; sides that do not tile the image
    /// (or are not multiples of 8) are dropped with a warning. `budgets`
    /// defaults to 200/300/400-style budgets by side.
    pub fn from_sides(
        image_height: usize,
        image_width: usize,
        sides: &[usize],
        budgets: Option<&[usize]>,
        arch: DecoderArch,
        seed: u64,
    ) -> Result<Self> {
        if let Some(b) = budgets {
            if b.len() != sides.len() {
                return Err(Error::dim("bagging budgets", sides.len(), b.len()));
            }
        }
        let mut scales = Vec::new();
        for (i, &side) in sides.iter().enumerate() {
            if side == 0 || side % 8 != 0 || image_height % side != 0 || image_width % side != 0 {
                log::warn!("dropping patch size {side}x{side}: does not tile a {image_height}x{image_width} image");
                continue;
            }
            let budget = budgets.map_or_else(|| default_budget(side), |b| b[i]);
            scales.push(Scale {
                height: side,
                width: side,
                budget,
            });
        }
        Self::new(image_height, image_width, scales, arch, DEFAULT_LEARNING_RATE, seed)
    }

    /// The 32/64/128 tilings with the default budgets and the deep decoder.
    pub fn default_for(image_height: usize, image_width: usize, seed: u64) -> Result<Self> {
        Self::from_sides(
            image_height,
            image_width,
            &DEFAULT_PATCH_SIDES,
            None,
            DecoderArch::deep(8, 8)?,
            seed,
        )
    }

    /// A single decoder over the whole image.
    pub fn whole_image(image_height: usize, image_width: usize, arch: DecoderArch, budget: usize, seed: u64) -> Result<Self> {
        Self::new(
            image_height,
            image_width,
            vec![Scale {
                height: image_height,
                width: image_width,
                budget,
            }],
            arch,
            DEFAULT_LEARNING_RATE,
            seed,
        )
    }

    pub fn with_lr(mut self, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Validation(format!("decoder learning rate must be positive, got {lr}")));
        }
        self.lr = lr;
        Ok(self)
    }

    /// Same plan with a different seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn scales(&self) -> &[Scale] {
        &self.scales
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.image_height, self.image_width)
    }

    pub fn arch(&self) -> &DecoderArch {
        &self.arch
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Seed of the decoder fitted to patch `patch` of scale `scale`.
    pub fn patch_seed(&self, scale: usize, patch: usize) -> u64 {
        derive_seed(self.seed, &[scale as u64, patch as u64])
    }
}

/// Estimate from one tiling: every patch fitted independently, then reassembled.
pub fn project_scale(image: ArrayView1<f64>, plan: &BaggingPlan, scale: usize) -> Result<Array1<f64>> {
    let s = *plan
        .scales
        .get(scale)
        .ok_or_else(|| Error::Validation(format!("scale {scale} not in plan with {} scales", plan.scales.len())))?;
    let (h, w) = plan.image_dims();
    let arch = plan.arch.resized(s.height, s.width)?;
    let mut patches = partition(image, h, w, (s.height, s.width))?;
    for (index, patch) in patches.iter_mut().enumerate() {
        let fitted = fit(patch.pixels.view(), arch, s.budget, plan.lr, plan.patch_seed(scale, index)).map_err(|e| {
            Error::Patch {
                height: s.height,
                width: s.width,
                index,
                source: Box::new(e),
            }
        })?;
        patch.pixels = fitted.output;
    }
    reassemble(&patches, h, w)
}

/// Per-scale estimates and their average.
#[derive(Debug, Clone)]
pub struct BaggedEstimate {
    pub average: Array1<f64>,
    pub per_scale: Vec<Array1<f64>>,
}

/// Average of [`project_scale`] over all scales, summed in plan order.
pub fn bagged_project(image: ArrayView1<f64>, plan: &BaggingPlan) -> Result<BaggedEstimate> {
    let (h, w) = plan.image_dims();
    if image.len() != h * w {
        return Err(Error::dim("bagged_project image", h * w, image.len()));
    }
    let per_scale = (0..plan.scales.len())
        .map(|k| project_scale(image, plan, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(BaggedEstimate {
        average: average(&per_scale)?,
        per_scale,
    })
}

/// Elementwise mean of equally sized estimates in the given order.
pub fn average(estimates: &[Array1<f64>]) -> Result<Array1<f64>> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::Validation("cannot average an empty set of estimates".into()))?;
    let mut sum = Array1::<f64>::zeros(first.len());
    for e in estimates {
        if e.len() != first.len() {
            return Err(Error::dim("average estimates", first.len(), e.len()));
        }
        sum += e;
    }
    Ok(sum / estimates.len() as f64)
}

/// Pearson correlations between the error images `estimate_i − reference`,
/// as `(i, j, rho)` for `i < j`.
pub fn error_correlations(estimates: &[Array1<f64>], reference: ArrayView1<f64>) -> Result<Vec<(usize, usize, f64)>> {
    let errs = estimates
        .iter()
        .map(|e| {
            if e.len() != reference.len() {
                return Err(Error::dim("error_correlations", reference.len(), e.len()));
            }
            let d = e - &reference;
            let mean = d.mean().unwrap_or(0.0);
            Ok(d - mean)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for i in 0..errs.len() {
        for j in (i + 1)..errs.len() {
            let num = errs[i].dot(&errs[j]);
            let den = (errs[i].dot(&errs[i]) * errs[j].dot(&errs[j])).sqrt();
            out.push((i, j, if den > 0.0 { num / den } else { 0.0 }));
        }
    }
    Ok(out)
}
