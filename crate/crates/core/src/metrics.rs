//! Image quality: MSE, PSNR (peak 1) and SSIM.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    /// All three metrics of `estimate` against `reference`, both `height × width`.
    pub fn compute(estimate: ArrayView1<f64>, reference: ArrayView1<f64>, height: usize, width: usize) -> Result<Self> {
        let e = mse(estimate, reference)?;
        Ok(Self {
            mse: e,
            psnr_db: psnr_from_mse(e),
            ssim: ssim_flat(estimate, reference, height, width)?,
        })
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim("metric inputs", a, b));
    }
    if a == 0 {
        return Err(Error::Validation("metrics need non-empty images".into()));
    }
    Ok(())
}

/// Mean of squared differences.
pub fn mse(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP_DB)
    }
}

/// `10·log10(1 / mse)` in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Array1<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g = Array1::from_shape_fn(size, |i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp());
    let s = g.sum();
    g / s
}

/// Separable "valid" filtering with the same taps along both axes.
fn filter_valid(img: &Array2<f64>, taps: &Array1<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for r in 0..h {
        for c in 0..ow {
            rows[[r, c]] = (0..k).map(|t| taps[t] * img[[r, c + t]]).sum();
        }
    }
    Array2::from_shape_fn((oh, ow), |(r, c)| (0..k).map(|t| taps[t] * rows[[r + t, c]]).sum())
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03` and unit peak, averaged over all window positions
/// lying fully inside the image.
pub fn ssim(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim("ssim inputs", format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Validation(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let a = a.to_owned();
    let b = b.to_owned();
    let mu_a = filter_valid(&a, &taps);
    let mu_b = filter_valid(&b, &taps);
    let aa = filter_valid(&(&a * &a), &taps);
    let bb = filter_valid(&(&b * &b), &taps);
    let ab = filter_valid(&(&a * &b), &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for ((((&ma, &mb), &saa), &sbb), &sab) in mu_a.iter().zip(mu_b.iter()).zip(aa.iter()).zip(bb.iter()).zip(ab.iter()) {
        let var_a = saa - ma * ma;
        let var_b = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// [`ssim`] on row-major flattened images.
pub fn ssim_flat(a: ArrayView1<f64>, b: ArrayView1<f64>, height: usize, width: usize) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.len() != height * width {
        return Err(Error::dim("ssim image size", height * width, a.len()));
    }
    let a2 = a.to_owned().into_shape_with_order((height, width)).expect("length checked");
    let b2 = b.to_owned().into_shape_with_order((height, width)).expect("length checked");
    ssim(a2.view(), b2.view())
}
