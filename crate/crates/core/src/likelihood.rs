//! Multilook negative log-likelihood and its gradient.
//!
//! Complex model (stacked real form `ỹ = [Re y; Im y]`):
//!
//! ```text
//! f_L(x) = log det B(x) + (1/L) Σ_ℓ ỹ_ℓᵀ B(x)⁻¹ ỹ_ℓ
//! ```
//!
//! With `B⁻¹ = [[U, -V], [V, U]]` and `M = U + iV` the quadratic form is
//! `Re(yᴴ M y)` and the gradient is
//!
//! ```text
//! ∂f_L/∂x_j = 4 x_j σ_w² Re(a_jᴴ M a_j) − (2 x_j σ_w² / L) Σ_ℓ |a_jᴴ M y_ℓ|².
//! ```
//!
//! The real model replaces `B` by `Σ = σ_z² I + σ_w² A X² Aᵀ`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::cxla::{assemble_b, complex_gemm, ComplexCholesky, HermitianInverse, RealCholesky};
use crate::error::{Error, Result};
use crate::sensing::MeasurementEnsemble;

fn check_len(x: ArrayView1<f64>, n: usize, context: &'static str) -> Result<()> {
    if x.len() != n {
        return Err(Error::dim(context, n, x.len()));
    }
    Ok(())
}

/// `(1/L) Σ_ℓ Re(y_ℓᴴ M y_ℓ)`.
pub fn data_term(inv: &HermitianInverse, ens: &MeasurementEnsemble) -> Result<f64> {
    if inv.dim() != ens.m() {
        return Err(Error::dim("data_term", ens.m(), inv.dim()));
    }
    let y = ens.looks();
    let (myr, myi) = complex_gemm(inv.u().view(), inv.v().view(), y.re().view(), y.im().view());
    let total: f64 = Zip::from(y.re())
        .and(y.im())
        .and(&myr)
        .and(&myi)
        .fold(0.0, |acc, &yr, &yi, &mr, &mi| acc + yr * mr + yi * mi);
    Ok(total / ens.num_looks() as f64)
}

/// `f_L(x)` using `inv` for the quadratic term; the log-determinant comes
/// from a fresh Cholesky factorization of `B(x)`.
pub fn eval_fl(x: ArrayView1<f64>, inv: &HermitianInverse, ens: &MeasurementEnsemble) -> Result<f64> {
    check_len(x, ens.n(), "eval_fl")?;
    let (sw, sz) = ens.component_sigmas();
    let b = assemble_b(x, ens.a(), sw, sz)?;
    let chol = ComplexCholesky::factor(&b)?;
    Ok(chol.log_det_block() + data_term(inv, ens)?)
}

/// `f_L(x)` with the exact inverse, factoring `B(x)` once.
pub fn eval_fl_exact(x: ArrayView1<f64>, ens: &MeasurementEnsemble) -> Result<f64> {
    check_len(x, ens.n(), "eval_fl_exact")?;
    let (sw, sz) = ens.component_sigmas();
    let b = assemble_b(x, ens.a(), sw, sz)?;
    let chol = ComplexCholesky::factor(&b)?;
    Ok(chol.log_det_block() + data_term(&chol.inverse(), ens)?)
}

/// Gradient of `f_L` at `x` given (an approximation of) `B(x)⁻¹`.
///
/// Forms `M A` once (an `m×n` complex product); the `n` diagonal terms and
/// the `n·L` data terms are then inner products.
pub fn grad_fl(x: ArrayView1<f64>, inv: &HermitianInverse, ens: &MeasurementEnsemble) -> Result<Array1<f64>> {
    check_len(x, ens.n(), "grad_fl")?;
    if inv.dim() != ens.m() {
        return Err(Error::dim("grad_fl", ens.m(), inv.dim()));
    }
    let a = ens.a();
    let y = ens.looks();
    let (mar, mai) = complex_gemm(inv.u().view(), inv.v().view(), a.re().view(), a.im().view());
    // Re(a_jᴴ (M a)_j) column by column.
    let mut diag = Array1::<f64>::zeros(ens.n());
    Zip::from(&mut diag)
        .and(a.re().columns())
        .and(a.im().columns())
        .and(mar.columns())
        .and(mai.columns())
        .for_each(|d, ar, ai, mr, mi| *d = ar.dot(&mr) + ai.dot(&mi));
    // Z = Aᴴ (M Y), n×L
    let (myr, myi) = complex_gemm(inv.u().view(), inv.v().view(), y.re().view(), y.im().view());
    let (zr, zi) = conj_transpose_times(a.re().view(), a.im().view(), myr.view(), myi.view());
    let l = ens.num_looks() as f64;
    let w2 = ens.component_sigmas().0.powi(2);
    let mut grad = Array1::<f64>::zeros(ens.n());
    Zip::from(&mut grad)
        .and(x)
        .and(&diag)
        .and(zr.rows())
        .and(zi.rows())
        .for_each(|g, &xj, &dj, rr, ri| {
            let energy = rr.dot(&rr) + ri.dot(&ri);
            *g = 4.0 * xj * w2 * dj - 2.0 * xj * w2 * energy / l;
        });
    Ok(grad)
}

/// `(ar + i·ai)ᴴ (br + i·bi)`.
fn conj_transpose_times(
    ar: ArrayView2<f64>,
    ai: ArrayView2<f64>,
    br: ArrayView2<f64>,
    bi: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let shape = (ar.ncols(), br.ncols());
    let mut re = Array2::zeros(shape);
    let mut im = Array2::zeros(shape);
    general_mat_mul(1.0, &ar.t(), &br, 0.0, &mut re);
    general_mat_mul(1.0, &ai.t(), &bi, 1.0, &mut re);
    general_mat_mul(1.0, &ar.t(), &bi, 0.0, &mut im);
    general_mat_mul(-1.0, &ai.t(), &br, 1.0, &mut im);
    (re, im)
}

/// Inverse of `B(x)` with its likelihood bookkeeping, for one estimate.
///
/// The owner decides whether `inverse` is exact or tracked.
#[derive(Debug)]
pub struct LikelihoodWorkspace<'a> {
    ens: &'a MeasurementEnsemble,
    x: Option<Array1<f64>>,
    inverse: Option<HermitianInverse>,
}

impl<'a> LikelihoodWorkspace<'a> {
    pub fn new(ens: &'a MeasurementEnsemble) -> Self {
        Self {
            ens,
            x: None,
            inverse: None,
        }
    }

    pub fn ensemble(&self) -> &'a MeasurementEnsemble {
        self.ens
    }

    /// Caches `inverse` as the inverse of `B(x)`.
    pub fn set(&mut self, x: Array1<f64>, inverse: HermitianInverse) -> Result<()> {
        check_len(x.view(), self.ens.n(), "LikelihoodWorkspace::set")?;
        if inverse.dim() != self.ens.m() {
            return Err(Error::dim("LikelihoodWorkspace::set", self.ens.m(), inverse.dim()));
        }
        self.x = Some(x);
        self.inverse = Some(inverse);
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_some()
    }

    pub fn invalidate(&mut self) {
        self.x = None;
        self.inverse = None;
    }

    fn cached(&self) -> Result<(&Array1<f64>, &HermitianInverse)> {
        match (&self.x, &self.inverse) {
            (Some(x), Some(inv)) => Ok((x, inv)),
            _ => Err(Error::Usage("likelihood workspace has no cached inverse".into())),
        }
    }

    pub fn value(&self) -> Result<f64> {
        let (x, inv) = self.cached()?;
        eval_fl(x.view(), inv, self.ens)
    }

    pub fn gradient(&self) -> Result<Array1<f64>> {
        let (x, inv) = self.cached()?;
        grad_fl(x.view(), inv, self.ens)
    }
}

fn real_covariance(
    x: ArrayView1<f64>,
    a: ArrayView2<f64>,
    sigma_w: f64,
    sigma_z: f64,
) -> Result<Array2<f64>> {
    if x.len() != a.ncols() {
        return Err(Error::dim("real likelihood", a.ncols(), x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("estimate contains non-finite values".into()));
    }
    let scaled = &a * &x.mapv(|v| sigma_w * v);
    let mut sigma = scaled.dot(&scaled.t());
    sigma.diag_mut().mapv_inplace(|v| v + sigma_z * sigma_z);
    Ok(sigma)
}

fn check_looks(a: ArrayView2<f64>, looks: ArrayView2<f64>) -> Result<()> {
    if looks.nrows() != a.nrows() {
        return Err(Error::dim("real likelihood looks", a.nrows(), looks.nrows()));
    }
    if looks.ncols() == 0 {
        return Err(Error::Validation("at least one look is required".into()));
    }
    Ok(())
}

/// Real-valued model: `log det Σ + (1/L) Σ_ℓ y_ℓᵀ Σ⁻¹ y_ℓ`.
/// `looks` holds one look per column.
pub fn eval_f_real(
    x: ArrayView1<f64>,
    a: ArrayView2<f64>,
    looks: ArrayView2<f64>,
    sigma_w: f64,
    sigma_z: f64,
) -> Result<f64> {
    check_looks(a, looks)?;
    let sigma = real_covariance(x, a, sigma_w, sigma_z)?;
    let chol = RealCholesky::factor(&sigma)?;
    let quad: f64 = looks
        .columns()
        .into_iter()
        .map(|y| y.dot(&chol.solve(y)))
        .sum();
    Ok(chol.log_det() + quad / looks.ncols() as f64)
}

/// Gradient of [`eval_f_real`]:
/// `2 x_j σ_w² a_jᵀ Σ⁻¹ a_j − (2 x_j σ_w² / L) Σ_ℓ (a_jᵀ Σ⁻¹ y_ℓ)²`.
pub fn grad_f_real(
    x: ArrayView1<f64>,
    a: ArrayView2<f64>,
    looks: ArrayView2<f64>,
    sigma_w: f64,
    sigma_z: f64,
) -> Result<Array1<f64>> {
    check_looks(a, looks)?;
    let sigma = real_covariance(x, a, sigma_w, sigma_z)?;
    let inv = RealCholesky::factor(&sigma)?.inverse();
    let ia = inv.dot(&a);
    let projected = a.t().dot(&inv.dot(&looks));
    let l = looks.ncols() as f64;
    let w2 = sigma_w * sigma_w;
    let mut grad = Array1::<f64>::zeros(a.ncols());
    Zip::from(&mut grad)
        .and(x)
        .and(a.columns())
        .and(ia.columns())
        .and(projected.rows())
        .for_each(|g, &xj, aj, iaj, pj| {
            *g = 2.0 * xj * w2 * aj.dot(&iaj) - 2.0 * xj * w2 * pj.dot(&pj) / l;
        });
    Ok(grad)
}
