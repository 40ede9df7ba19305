//! Dense real and complex linear algebra.
//!
//! Complex matrices are stored in split form (separate real and imaginary
//! planes) so that every complex product reduces to real GEMMs. The
//! covariance of a single look,
//!
//! ```text
//! B(x) = [[S, -T], [T, S]],   S + iT = σ_z² I + σ_w² A X² Aᴴ,
//! ```
//!
//! is never materialised as a 2m×2m matrix: it is kept as the complex
//! Hermitian matrix `S + iT`, and its inverse as `U + iV` with
//! `B⁻¹ = [[U, -V], [V, U]]`.

mod factor;
mod svd;

pub use factor::{ComplexCholesky, RealCholesky};
pub use svd::{singular_values, spectral_bounds};

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex vector.
pub type ComplexVec = Array1<Complex64>;

/// Dense complex matrix in split (real plane, imaginary plane) storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMat {
    re: Array2<f64>,
    im: Array2<f64>,
}

impl ComplexMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            re: Array2::zeros((rows, cols)),
            im: Array2::zeros((rows, cols)),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            re: Array2::eye(n),
            im: Array2::zeros((n, n)),
        }
    }

    pub fn from_parts(re: Array2<f64>, im: Array2<f64>) -> Result<Self> {
        if re.dim() != im.dim() {
            return Err(Error::dim(
                "ComplexMat::from_parts",
                format!("{:?}", re.dim()),
                format!("{:?}", im.dim()),
            ));
        }
        Ok(Self { re, im })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let z = f(i, j);
                out.re[[i, j]] = z.re;
                out.im[[i, j]] = z.im;
            }
        }
        out
    }

    /// Real matrix embedded with zero imaginary part.
    pub fn from_real(re: Array2<f64>) -> Self {
        let im = Array2::zeros(re.dim());
        Self { re, im }
    }

    pub fn rows(&self) -> usize {
        self.re.nrows()
    }

    pub fn cols(&self) -> usize {
        self.re.ncols()
    }

    pub fn re(&self) -> &Array2<f64> {
        &self.re
    }

    pub fn im(&self) -> &Array2<f64> {
        &self.im
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>) {
        (self.re, self.im)
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[[i, j]], self.im[[i, j]])
    }

    pub fn set(&mut self, i: usize, j: usize, z: Complex64) {
        self.re[[i, j]] = z.re;
        self.im[[i, j]] = z.im;
    }

    pub fn column(&self, j: usize) -> ComplexVec {
        Zip::from(self.re.column(j))
            .and(self.im.column(j))
            .map_collect(|&r, &i| Complex64::new(r, i))
    }

    pub fn conj_transpose(&self) -> Self {
        Self {
            re: self.re.t().to_owned(),
            im: self.im.t().mapv(|v| -v),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.re
            .iter()
            .chain(self.im.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `self · other`.
    pub fn matmul(&self, other: &ComplexMat) -> Result<ComplexMat> {
        if self.cols() != other.rows() {
            return Err(Error::dim("ComplexMat::matmul", self.cols(), other.rows()));
        }
        let (re, im) = complex_gemm(
            self.re.view(),
            self.im.view(),
            other.re.view(),
            other.im.view(),
        );
        Ok(ComplexMat { re, im })
    }

    /// `self · v`.
    pub fn matvec(&self, v: ArrayView1<Complex64>) -> Result<ComplexVec> {
        if self.cols() != v.len() {
            return Err(Error::dim("ComplexMat::matvec", self.cols(), v.len()));
        }
        let vr = v.mapv(|z| z.re);
        let vi = v.mapv(|z| z.im);
        let rr = self.re.dot(&vr) - self.im.dot(&vi);
        let ri = self.re.dot(&vi) + self.im.dot(&vr);
        Ok(Zip::from(&rr).and(&ri).map_collect(|&r, &i| Complex64::new(r, i)))
    }

    /// `selfᴴ · v` without forming the conjugate transpose.
    pub fn conj_transpose_matvec(&self, v: ArrayView1<Complex64>) -> Result<ComplexVec> {
        if self.rows() != v.len() {
            return Err(Error::dim("ComplexMat::conj_transpose_matvec", self.rows(), v.len()));
        }
        let vr = v.mapv(|z| z.re);
        let vi = v.mapv(|z| z.im);
        let rr = self.re.t().dot(&vr) + self.im.t().dot(&vi);
        let ri = self.re.t().dot(&vi) - self.im.t().dot(&vr);
        Ok(Zip::from(&rr).and(&ri).map_collect(|&r, &i| Complex64::new(r, i)))
    }
}

/// `(ar + i·ai)(br + i·bi)` with four real GEMMs.
pub(crate) fn complex_gemm(
    ar: ArrayView2<f64>,
    ai: ArrayView2<f64>,
    br: ArrayView2<f64>,
    bi: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let shape = (ar.nrows(), br.ncols());
    let mut re = Array2::zeros(shape);
    let mut im = Array2::zeros(shape);
    general_mat_mul(1.0, &ar, &br, 0.0, &mut re);
    general_mat_mul(-1.0, &ai, &bi, 1.0, &mut re);
    general_mat_mul(1.0, &ar, &bi, 0.0, &mut im);
    general_mat_mul(1.0, &ai, &br, 1.0, &mut im);
    (re, im)
}

/// Real/imaginary planes of `A · diag(d) · Aᴴ` for a real weight vector `d`.
///
/// The real part is symmetrised and the imaginary part antisymmetrised
/// exactly, so downstream structure checks see bit-exact symmetry.
pub fn weighted_gram(a: &ComplexMat, d: ArrayView1<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if a.cols() != d.len() {
        return Err(Error::dim("weighted_gram", a.cols(), d.len()));
    }
    let m = a.rows();
    let ard = &a.re * &d;
    let aid = &a.im * &d;
    // Re = Ar D Arᵀ + Ai D Aiᵀ
    let left = concatenate(Axis(1), &[ard.view(), aid.view()]).expect("same row count");
    let right = concatenate(Axis(1), &[a.re.view(), a.im.view()]).expect("same row count");
    let mut re = Array2::zeros((m, m));
    general_mat_mul(1.0, &left, &right.t(), 0.0, &mut re);
    // Im = Ai D Arᵀ − Ar D Aiᵀ = W − Wᵀ with W = (Ai D) Arᵀ
    let mut w = Array2::zeros((m, m));
    general_mat_mul(1.0, &aid, &a.re.t(), 0.0, &mut w);
    let im = &w - &w.t();
    let re = symmetric_part(re.view());
    Ok((re, im))
}

pub(crate) fn symmetric_part(a: ArrayView2<f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    let n = out.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

pub(crate) fn antisymmetric_part(a: ArrayView2<f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    let n = out.nrows();
    for i in 0..n {
        out[[i, i]] = 0.0;
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] - a[[j, i]]);
            out[[i, j]] = v;
            out[[j, i]] = -v;
        }
    }
    out
}

fn relative_asymmetry(a: &Array2<f64>, sign: f64) -> f64 {
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let diff = (a - &a.t().mapv(|v| sign * v))
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    diff / norm
}

/// The structured 2m×2m covariance `[[S, -T], [T, S]]` of one look.
///
/// Stored as the complex Hermitian matrix `S + iT`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCovariance {
    s: Array2<f64>,
    t: Array2<f64>,
}

impl BlockCovariance {
    /// Builds the block matrix from its blocks; `s` must be symmetric and
    /// `t` antisymmetric.
    pub fn from_blocks(s: Array2<f64>, t: Array2<f64>) -> Result<Self> {
        if s.nrows() != s.ncols() || s.dim() != t.dim() {
            return Err(Error::dim(
                "BlockCovariance::from_blocks",
                format!("square blocks {:?}", s.dim()),
                format!("{:?}", t.dim()),
            ));
        }
        Ok(Self { s, t })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            s: Array2::eye(m),
            t: Array2::zeros((m, m)),
        }
    }

    /// Half-dimension `m` (the full matrix is 2m×2m).
    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn s(&self) -> &Array2<f64> {
        &self.s
    }

    pub fn t(&self) -> &Array2<f64> {
        &self.t
    }

    /// The Hermitian matrix `S + iT`.
    pub fn to_complex(&self) -> ComplexMat {
        ComplexMat {
            re: self.s.clone(),
            im: self.t.clone(),
        }
    }

    /// Explicit 2m×2m real matrix.
    pub fn to_dense(&self) -> Array2<f64> {
        block_embed(&self.s, &self.t)
    }
}

/// `[[re, -im], [im, re]]`.
pub fn block_embed(re: &Array2<f64>, im: &Array2<f64>) -> Array2<f64> {
    let m = re.nrows();
    let n = re.ncols();
    let mut out = Array2::zeros((2 * m, 2 * n));
    out.slice_mut(s![..m, ..n]).assign(re);
    out.slice_mut(s![..m, n..]).assign(&im.mapv(|v| -v));
    out.slice_mut(s![m.., ..n]).assign(im);
    out.slice_mut(s![m.., n..]).assign(re);
    out
}

/// Inverse of a [`BlockCovariance`] in complex form: `B⁻¹ = [[U, -V], [V, U]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianInverse {
    u: Array2<f64>,
    v: Array2<f64>,
}

impl HermitianInverse {
    pub fn from_blocks(u: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if u.nrows() != u.ncols() || u.dim() != v.dim() {
            return Err(Error::dim(
                "HermitianInverse::from_blocks",
                format!("square blocks {:?}", u.dim()),
                format!("{:?}", v.dim()),
            ));
        }
        Ok(Self { u, v })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            u: Array2::eye(m),
            v: Array2::zeros((m, m)),
        }
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn to_complex(&self) -> ComplexMat {
        ComplexMat {
            re: self.u.clone(),
            im: self.v.clone(),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        block_embed(&self.u, &self.v)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            u: &self.u * factor,
            v: &self.v * factor,
        }
    }

    /// Relative Frobenius deviation of `U` from symmetry and of `V` from
    /// antisymmetry, whichever is larger.
    pub fn structure_defect(&self) -> f64 {
        relative_asymmetry(&self.u, 1.0).max(relative_asymmetry(&self.v, -1.0))
    }

    /// `M · w` for a complex vector `w`, where `M = U + iV`.
    pub fn apply(&self, w: ArrayView1<Complex64>) -> ComplexVec {
        let wr = w.mapv(|z| z.re);
        let wi = w.mapv(|z| z.im);
        let rr = self.u.dot(&wr) - self.v.dot(&wi);
        let ri = self.u.dot(&wi) + self.v.dot(&wr);
        Zip::from(&rr).and(&ri).map_collect(|&r, &i| Complex64::new(r, i))
    }
}

fn check_finite(values: ArrayView1<f64>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} contains non-finite values")))
    }
}

/// `B(x)` for the estimate `x`: `S + iT = σ_z² I + σ_w² A X² Aᴴ`.
pub fn assemble_b(
    x: ArrayView1<f64>,
    a: &ComplexMat,
    sigma_w: f64,
    sigma_z: f64,
) -> Result<BlockCovariance> {
    if x.len() != a.cols() {
        return Err(Error::dim("assemble_b", a.cols(), x.len()));
    }
    check_finite(x, "estimate")?;
    if !(sigma_w > 0.0 && sigma_w.is_finite()) {
        return Err(Error::Validation(format!("sigma_w must be positive, got {sigma_w}")));
    }
    if !(sigma_z >= 0.0 && sigma_z.is_finite()) {
        return Err(Error::Validation(format!("sigma_z must be nonnegative, got {sigma_z}")));
    }
    let w2 = sigma_w * sigma_w;
    let d = x.mapv(|v| w2 * v * v);
    let (mut s, t) = weighted_gram(a, d.view())?;
    let z2 = sigma_z * sigma_z;
    s.diag_mut().mapv_inplace(|v| v + z2);
    Ok(BlockCovariance { s, t })
}

/// Exact inverse of `B` via a Cholesky factorization of `S + iT`, falling
/// back to partially pivoted LU when the matrix is not positive definite.
pub fn exact_inverse(b: &BlockCovariance) -> Result<HermitianInverse> {
    match ComplexCholesky::factor(b) {
        Ok(chol) => Ok(chol.inverse()),
        Err(chol_err) => {
            let rcond = match &chol_err {
                Error::Numerical { rcond, .. } => *rcond,
                _ => None,
            };
            factor::lu_inverse(&b.to_complex()).map_err(|e| match e {
                Error::Numerical { message, .. } => Error::numerical(
                    format!("matrix is not positive definite and LU failed: {message}"),
                    rcond,
                ),
                other => other,
            })
        }
    }
}

/// One Newton-Schulz refinement `M' = M + M(I − B M)` in complex form.
///
/// Satisfies `I − M'B = (I − MB)²` exactly in exact arithmetic.
pub fn newton_schulz_step(b: &BlockCovariance, m: &HermitianInverse) -> Result<HermitianInverse> {
    if b.dim() != m.dim() {
        return Err(Error::dim("newton_schulz_step", b.dim(), m.dim()));
    }
    // BM = (S + iT)(U + iV)
    let (bm_re, bm_im) = complex_gemm(b.s.view(), b.t.view(), m.u.view(), m.v.view());
    // M (B M)
    let (mbm_re, mbm_im) = complex_gemm(m.u.view(), m.v.view(), bm_re.view(), bm_im.view());
    let u = &m.u * 2.0 - &mbm_re;
    let v = &m.v * 2.0 - &mbm_im;
    Ok(HermitianInverse {
        u: symmetric_part(u.view()),
        v: antisymmetric_part(v.view()),
    })
}

/// `I − M·B` in complex form (the m×m complex matrix whose real block
/// embedding is `I_{2m} − B⁻¹_approx · B`).
pub fn inverse_defect(b: &BlockCovariance, m: &HermitianInverse) -> Result<ComplexMat> {
    if b.dim() != m.dim() {
        return Err(Error::dim("inverse_defect", b.dim(), m.dim()));
    }
    let (re, im) = complex_gemm(m.u.view(), m.v.view(), b.s.view(), b.t.view());
    let re = Array2::eye(b.dim()) - re;
    Ok(ComplexMat { re, im: -im })
}

/// `‖I_{2m} − M·B‖_F` measured on the real 2m×2m embedding.
pub fn defect_norm(b: &BlockCovariance, m: &HermitianInverse) -> Result<f64> {
    Ok(std::f64::consts::SQRT_2 * inverse_defect(b, m)?.frobenius_norm())
}
