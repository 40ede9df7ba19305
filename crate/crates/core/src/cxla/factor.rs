use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use num_complex::Complex64;

use super::{antisymmetric_part, symmetric_part, BlockCovariance, ComplexMat, HermitianInverse};
use crate::error::{Error, Result};

/// Cholesky factor `L` of the Hermitian positive definite matrix `S + iT`
/// (`S + iT = L Lᴴ`), stored in split form, lower triangle only.
#[derive(Debug, Clone)]
pub struct ComplexCholesky {
    lr: Array2<f64>,
    li: Array2<f64>,
}

impl ComplexCholesky {
    pub fn factor(b: &BlockCovariance) -> Result<Self> {
        Self::factor_parts(b.s(), b.t())
    }

    /// Factors `re + i·im`, reading only the lower triangle.
    pub fn factor_parts(re: &Array2<f64>, im: &Array2<f64>) -> Result<Self> {
        let m = re.nrows();
        let mut lr = Array2::<f64>::zeros((m, m));
        let mut li = Array2::<f64>::zeros((m, m));
        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0f64;
        for j in 0..m {
            let djj = {
                let rj = &lr.row(j).to_slice().unwrap()[..j];
                let ij = &li.row(j).to_slice().unwrap()[..j];
                re[[j, j]] - rj.iter().zip(ij).map(|(a, b)| a * a + b * b).sum::<f64>()
            };
            if !(djj > 0.0) || !djj.is_finite() {
                let rcond = if dmax > 0.0 { Some((dmin / dmax).powi(2)) } else { None };
                return Err(Error::numerical(
                    format!("Cholesky breakdown at pivot {j} (value {djj:.3e})"),
                    rcond.or(Some(0.0)),
                ));
            }
            let ljj = djj.sqrt();
            dmin = dmin.min(ljj);
            dmax = dmax.max(ljj);
            lr[[j, j]] = ljj;
            li[[j, j]] = 0.0;
            let inv = 1.0 / ljj;
            for i in (j + 1)..m {
                // (H_ij − Σ_k L_ik conj(L_jk)) / L_jj
                let (sr, si) = {
                    let ri = &lr.row(i).to_slice().unwrap()[..j];
                    let ii = &li.row(i).to_slice().unwrap()[..j];
                    let rj = &lr.row(j).to_slice().unwrap()[..j];
                    let ij = &li.row(j).to_slice().unwrap()[..j];
                    let mut sr = 0.0;
                    let mut si = 0.0;
                    for k in 0..j {
                        sr += ri[k] * rj[k] + ii[k] * ij[k];
                        si += ii[k] * rj[k] - ri[k] * ij[k];
                    }
                    (sr, si)
                };
                lr[[i, j]] = (re[[i, j]] - sr) * inv;
                li[[i, j]] = (im[[i, j]] - si) * inv;
            }
        }
        Ok(Self { lr, li })
    }

    pub fn dim(&self) -> usize {
        self.lr.nrows()
    }

    /// `log det(S + iT)`.
    pub fn log_det_hermitian(&self) -> f64 {
        2.0 * self.lr.diag().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `log det B` of the 2m×2m real embedding, which is `2·log det(S + iT)`.
    pub fn log_det_block(&self) -> f64 {
        2.0 * self.log_det_hermitian()
    }

    /// Squared ratio of the smallest to largest Cholesky pivot, a cheap
    /// reciprocal condition estimate.
    pub fn rcond_estimate(&self) -> f64 {
        let d = self.lr.diag();
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d.iter().cloned().fold(0.0, f64::max);
        (lo / hi).powi(2)
    }

    /// Solves `(S + iT) z = w`.
    pub fn solve(&self, w: ArrayView1<Complex64>) -> Result<Array1<Complex64>> {
        let m = self.dim();
        if w.len() != m {
            return Err(Error::dim("ComplexCholesky::solve", m, w.len()));
        }
        let mut z: Vec<Complex64> = w.to_vec();
        // L y = w
        for i in 0..m {
            let mut acc = z[i];
            for k in 0..i {
                acc -= Complex64::new(self.lr[[i, k]], self.li[[i, k]]) * z[k];
            }
            z[i] = acc / self.lr[[i, i]];
        }
        // Lᴴ z = y
        for i in (0..m).rev() {
            let mut acc = z[i];
            for k in (i + 1)..m {
                acc -= Complex64::new(self.lr[[k, i]], -self.li[[k, i]]) * z[k];
            }
            z[i] = acc / self.lr[[i, i]];
        }
        Ok(Array1::from(z))
    }

    /// `(L⁻¹)ᵀ` in split form, built row by row so both operands stream
    /// contiguously.
    fn inverse_factor_transposed(&self) -> (Array2<f64>, Array2<f64>) {
        let m = self.dim();
        let mut yr = Array2::<f64>::zeros((m, m));
        let mut yi = Array2::<f64>::zeros((m, m));
        for j in 0..m {
            for i in j..m {
                let (mut ar, mut ai) = if i == j { (1.0, 0.0) } else { (0.0, 0.0) };
                {
                    let lri = &self.lr.row(i).to_slice().unwrap()[j..i];
                    let lii = &self.li.row(i).to_slice().unwrap()[j..i];
                    let yrj = &yr.row(j).to_slice().unwrap()[j..i];
                    let yij = &yi.row(j).to_slice().unwrap()[j..i];
                    for k in 0..lri.len() {
                        ar -= lri[k] * yrj[k] - lii[k] * yij[k];
                        ai -= lri[k] * yij[k] + lii[k] * yrj[k];
                    }
                }
                let d = self.lr[[i, i]];
                yr[[j, i]] = ar / d;
                yi[[j, i]] = ai / d;
            }
        }
        (yr, yi)
    }

    /// The lower-triangular inverse factor `L⁻¹`, so that
    /// `L⁻¹ (S + iT) L⁻ᴴ = I`.
    pub fn inverse_factor(&self) -> ComplexMat {
        let (yr, yi) = self.inverse_factor_transposed();
        ComplexMat {
            re: yr.reversed_axes().as_standard_layout().into_owned(),
            im: yi.reversed_axes().as_standard_layout().into_owned(),
        }
    }

    /// `(S + iT)⁻¹ = U + iV`.
    pub fn inverse(&self) -> HermitianInverse {
        let m = self.dim();
        let (yr, yi) = self.inverse_factor_transposed();
        // M = L⁻ᴴ L⁻¹ = conj(Y) Yᵀ
        //   Re = Yr Yrᵀ + Yi Yiᵀ,  Im = Yr Yiᵀ − Yi Yrᵀ
        let stacked = concatenate(Axis(1), &[yr.view(), yi.view()]).expect("same rows");
        let mut u = Array2::zeros((m, m));
        general_mat_mul(1.0, &stacked, &stacked.t(), 0.0, &mut u);
        let mut w = Array2::zeros((m, m));
        general_mat_mul(1.0, &yr, &yi.t(), 0.0, &mut w);
        let v = &w - &w.t();
        HermitianInverse {
            u: symmetric_part(u.view()),
            v: antisymmetric_part(v.view()),
        }
    }
}

/// Inverse of a general complex square matrix by Gaussian elimination with
/// partial pivoting, returned in Hermitian-inverse form.
pub(crate) fn lu_inverse(h: &ComplexMat) -> Result<HermitianInverse> {
    let m = h.rows();
    let mut a: Vec<Complex64> = (0..m * m).map(|k| h.get(k / m, k % m)).collect();
    let mut inv: Vec<Complex64> = (0..m * m)
        .map(|k| if k / m == k % m { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
        .collect();
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut pivmin = f64::INFINITY;
    for col in 0..m {
        let (piv, pmag) = (col..m)
            .map(|r| (r, a[r * m + col].norm()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        pivmin = pivmin.min(pmag);
        if !(pmag > scale * 1e-14 * m as f64) {
            let rcond = if scale > 0.0 { pmag / scale } else { 0.0 };
            return Err(Error::numerical(format!("singular matrix at column {col}"), Some(rcond)));
        }
        if piv != col {
            for k in 0..m {
                a.swap(piv * m + k, col * m + k);
                inv.swap(piv * m + k, col * m + k);
            }
        }
        let p = a[col * m + col];
        for k in 0..m {
            a[col * m + k] /= p;
            inv[col * m + k] /= p;
        }
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = a[r * m + col];
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..m {
                let ak = a[col * m + k];
                let ik = inv[col * m + k];
                a[r * m + k] -= f * ak;
                inv[r * m + k] -= f * ik;
            }
        }
    }
    let u = Array2::from_shape_fn((m, m), |(i, j)| inv[i * m + j].re);
    let v = Array2::from_shape_fn((m, m), |(i, j)| inv[i * m + j].im);
    Ok(HermitianInverse {
        u: symmetric_part(u.view()),
        v: antisymmetric_part(v.view()),
    })
}

/// Cholesky factor of a real symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct RealCholesky {
    l: Array2<f64>,
}

impl RealCholesky {
    pub fn factor(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim("RealCholesky::factor", "square", format!("{:?}", a.dim())));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let d = {
                let lj = &l.row(j).to_slice().unwrap()[..j];
                a[[j, j]] - lj.iter().map(|v| v * v).sum::<f64>()
            };
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::numerical(
                    format!("matrix is not positive definite (pivot {j} = {d:.3e})"),
                    Some(0.0),
                ));
            }
            let ljj = d.sqrt();
            l[[j, j]] = ljj;
            for i in (j + 1)..n {
                let s = {
                    let li = &l.row(i).to_slice().unwrap()[..j];
                    let lj = &l.row(j).to_slice().unwrap()[..j];
                    li.iter().zip(lj).map(|(x, y)| x * y).sum::<f64>()
                };
                l[[i, j]] = (a[[i, j]] - s) / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diag().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.l.nrows();
        let mut z = b.to_vec();
        for i in 0..n {
            let s: f64 = (0..i).map(|k| self.l[[i, k]] * z[k]).sum();
            z[i] = (z[i] - s) / self.l[[i, i]];
        }
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|k| self.l[[k, i]] * z[k]).sum();
            z[i] = (z[i] - s) / self.l[[i, i]];
        }
        Array1::from(z)
    }

    pub fn inverse(&self) -> Array2<f64> {
        let n = self.l.nrows();
        let mut out = Array2::zeros((n, n));
        for j in 0..n {
            let mut e = Array1::zeros(n);
            e[j] = 1.0;
            out.column_mut(j).assign(&self.solve(e.view()));
        }
        symmetric_part(out.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn real_cholesky_small() {
        let a = ndarray::arr2(&[[4.0, 2.0], [2.0, 3.0]]);
        let c = RealCholesky::factor(&a).unwrap();
        assert_abs_diff_eq!(c.log_det(), 8f64.ln(), epsilon = 1e-14);
        let inv = c.inverse();
        let prod = a.dot(&inv);
        assert_abs_diff_eq!(prod[[0, 0]], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(prod[[0, 1]], 0.0, epsilon = 1e-14);
        assert!(RealCholesky::factor(&ndarray::arr2(&[[1.0, 2.0], [2.0, 1.0]])).is_err());
    }

    #[test]
    fn complex_cholesky_solve_and_logdet() {
        // H = [[2, i], [-i, 2]], det = 3
        let s = ndarray::arr2(&[[2.0, 0.0], [0.0, 2.0]]);
        let t = ndarray::arr2(&[[0.0, 1.0], [-1.0, 0.0]]);
        let b = BlockCovariance::from_blocks(s, t).unwrap();
        let c = ComplexCholesky::factor(&b).unwrap();
        assert_abs_diff_eq!(c.log_det_hermitian(), 3f64.ln(), epsilon = 1e-14);
        let w = Array1::from(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]);
        let z = c.solve(w.view()).unwrap();
        let back = b.to_complex().matvec(z.view()).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!((back[k] - w[k]).norm(), 0.0, epsilon = 1e-14);
        }
        assert!(c.rcond_estimate() > 0.0 && c.rcond_estimate() <= 1.0);
    }

    #[test]
    fn inverse_factor_whitens() {
        let s = ndarray::arr2(&[[3.0, 0.5, 0.1], [0.5, 2.0, 0.2], [0.1, 0.2, 1.5]]);
        let t = ndarray::arr2(&[[0.0, 0.3, -0.2], [-0.3, 0.0, 0.4], [0.2, -0.4, 0.0]]);
        let b = BlockCovariance::from_blocks(s, t).unwrap();
        let li = ComplexCholesky::factor(&b).unwrap().inverse_factor();
        let w = li.matmul(&b.to_complex()).unwrap().matmul(&li.conj_transpose()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(w.get(i, j).re, expect, epsilon = 1e-13);
                assert_abs_diff_eq!(w.get(i, j).im, 0.0, epsilon = 1e-13);
            }
            for j in (i + 1)..3 {
                assert_eq!(li.get(i, j), Complex64::new(0.0, 0.0));
            }
        }
    }
}
