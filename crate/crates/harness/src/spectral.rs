//! Largest eigenvalue of `C⁻¹B` for perturbed scenes.
//!
//! With `C = A X² Aᴴ = L Lᴴ` and `B = A (X+Δ)² Aᴴ`, the matrix `C⁻¹B` is
//! similar to the Hermitian `S (X+Δ)² Sᴴ` with `S = L⁻¹A`. Newton-Schulz
//! started from `C⁻¹` squares `I − C⁻¹B` at every step, so it converges
//! exactly when `λ_max(C⁻¹B) < 2`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use speckle_core::cxla::{weighted_gram, ComplexCholesky, ComplexMat};
use speckle_core::sensing::stream_rng;

use crate::error::Result;

/// The whitened sensing matrix `S = L⁻¹A` of one unperturbed scene.
#[derive(Debug, Clone)]
pub struct WhitenedSensing {
    sr: Array2<f64>,
    si: Array2<f64>,
}

impl WhitenedSensing {
    pub fn new(a: &ComplexMat, x: ArrayView1<f64>) -> Result<Self> {
        let (re, im) = weighted_gram(a, x.mapv(|v| v * v).view())?;
        let chol = ComplexCholesky::factor_parts(&re, &im)?;
        let (sr, si) = chol.inverse_factor().matmul(a)?.into_parts();
        Ok(Self { sr, si })
    }

    pub fn rows(&self) -> usize {
        self.sr.nrows()
    }

    pub fn cols(&self) -> usize {
        self.sr.ncols()
    }

    /// `S diag(d_t) Sᴴ v_t` for every column `t` of `(vr, vi)` and `weights`.
    pub fn apply(&self, vr: ArrayView2<f64>, vi: ArrayView2<f64>, weights: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (m, n, t) = (self.rows(), self.cols(), vr.ncols());
        let mut ur = Array2::zeros((n, t));
        let mut ui = Array2::zeros((n, t));
        general_mat_mul(1.0, &self.sr.t(), &vr, 0.0, &mut ur);
        general_mat_mul(1.0, &self.si.t(), &vi, 1.0, &mut ur);
        general_mat_mul(1.0, &self.sr.t(), &vi, 0.0, &mut ui);
        general_mat_mul(-1.0, &self.si.t(), &vr, 1.0, &mut ui);
        ur *= &weights;
        ui *= &weights;
        let mut wr = Array2::zeros((m, t));
        let mut wi = Array2::zeros((m, t));
        general_mat_mul(1.0, &self.sr, &ur, 0.0, &mut wr);
        general_mat_mul(-1.0, &self.si, &ui, 1.0, &mut wr);
        general_mat_mul(1.0, &self.sr, &ui, 0.0, &mut wi);
        general_mat_mul(1.0, &self.si, &ur, 1.0, &mut wi);
        (wr, wi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Below,
    Above,
    Undecided,
}

/// Top Ritz value of one trial and how it compares with the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopEigen {
    pub value: f64,
    /// `β_k |s_k|`: some eigenvalue lies within this distance of `value`.
    pub residual: f64,
    pub iterations: usize,
    pub verdict: Verdict,
}

/// Relative residual at which a top Ritz value below the threshold is accepted.
pub const CONVERGED_RESIDUAL: f64 = 1e-3;

struct Trial {
    qr: Vec<Array1<f64>>,
    qi: Vec<Array1<f64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    result: Option<TopEigen>,
}

/// Lanczos with full reorthogonalisation on `S diag(w_t) Sᴴ` for every
/// column `w_t` of `weights`, batched so each iteration is one pair of
/// matrix products.
///
/// A trial is `Above` as soon as its top Ritz value reaches `threshold`
/// (Ritz values never exceed `λ_max`), and `Below` once the top Ritz pair
/// has converged to [`CONVERGED_RESIDUAL`] strictly under it.
pub fn classify_top_eigenvalues(
    op: &WhitenedSensing,
    weights: ArrayView2<f64>,
    threshold: f64,
    max_iter: usize,
    seed: u64,
) -> Result<Vec<TopEigen>> {
    let (m, trials) = (op.rows(), weights.ncols());
    if weights.nrows() != op.cols() {
        return Err(crate::error::config_err(format!(
            "weights have {} rows for a sensing matrix with {} columns",
            weights.nrows(),
            op.cols()
        )));
    }
    let max_iter = max_iter.min(m);
    let mut state: Vec<Trial> = (0..trials)
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let mut qr: Array1<f64> = Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0));
            let mut qi: Array1<f64> = Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0));
            let norm = (qr.dot(&qr) + qi.dot(&qi)).sqrt();
            qr /= norm;
            qi /= norm;
            Trial {
                qr: vec![qr],
                qi: vec![qi],
                alpha: Vec::new(),
                beta: Vec::new(),
                result: None,
            }
        })
        .collect();

    for k in 0..max_iter {
        let active: Vec<usize> = (0..trials).filter(|&t| state[t].result.is_none()).collect();
        if active.is_empty() {
            break;
        }
        let mut vr = Array2::zeros((m, active.len()));
        let mut vi = Array2::zeros((m, active.len()));
        for (c, &t) in active.iter().enumerate() {
            vr.column_mut(c).assign(&state[t].qr[k]);
            vi.column_mut(c).assign(&state[t].qi[k]);
        }
        let w = weights.select(Axis(1), &active);
        let (wr, wi) = op.apply(vr.view(), vi.view(), w.view());
        for (c, &t) in active.iter().enumerate() {
            let s = &mut state[t];
            let mut xr = wr.column(c).to_owned();
            let mut xi = wi.column(c).to_owned();
            let a = s.qr[k].dot(&xr) + s.qi[k].dot(&xi);
            xr.scaled_add(-a, &s.qr[k]);
            xi.scaled_add(-a, &s.qi[k]);
            if k > 0 {
                let b = s.beta[k - 1];
                xr.scaled_add(-b, &s.qr[k - 1]);
                xi.scaled_add(-b, &s.qi[k - 1]);
            }
            for _ in 0..2 {
                for (pr, pi) in s.qr.iter().zip(s.qi.iter()) {
                    let cr = pr.dot(&xr) + pi.dot(&xi);
                    let ci = pr.dot(&xi) - pi.dot(&xr);
                    xr.scaled_add(-cr, pr);
                    xr.scaled_add(ci, pi);
                    xi.scaled_add(-cr, pi);
                    xi.scaled_add(-ci, pr);
                }
            }
            s.alpha.push(a);
            let b = (xr.dot(&xr) + xi.dot(&xi)).sqrt();
            let (theta, last) = top_ritz(&s.alpha, &s.beta);
            let residual = b * last.abs();
            let exhausted = b <= 1e-12 * theta.abs().max(1.0);
            let verdict = if theta >= threshold {
                Some(Verdict::Above)
            } else if exhausted || (residual <= CONVERGED_RESIDUAL * theta.abs() && theta + residual < threshold) {
                Some(Verdict::Below)
            } else if k + 1 == max_iter {
                Some(Verdict::Undecided)
            } else {
                None
            };
            if let Some(verdict) = verdict {
                s.result = Some(TopEigen {
                    value: theta,
                    residual,
                    iterations: k + 1,
                    verdict,
                });
                s.qr.clear();
                s.qi.clear();
            } else {
                s.beta.push(b);
                s.qr.push(xr / b);
                s.qi.push(xi / b);
            }
        }
    }
    Ok(state
        .into_iter()
        .map(|s| s.result.expect("every trial is decided by the last iteration"))
        .collect())
}

/// Number of eigenvalues of the symmetric tridiagonal `(alpha, beta)` below `x`.
fn sturm_count(alpha: &[f64], beta: &[f64], x: f64) -> usize {
    let pivmin = f64::MIN_POSITIVE.sqrt();
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..alpha.len() {
        let off = if i == 0 { 0.0 } else { beta[i - 1] * beta[i - 1] / d };
        d = alpha[i] - x - off;
        if d.abs() < pivmin {
            d = -pivmin;
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// Largest eigenvalue of the tridiagonal and the last component of its
/// unit eigenvector.
pub fn top_ritz(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let k = alpha.len();
    let radius = |i: usize| {
        let left = if i > 0 { beta[i - 1].abs() } else { 0.0 };
        let right = if i + 1 < k { beta[i].abs() } else { 0.0 };
        left + right
    };
    let mut lo = (0..k).map(|i| alpha[i] - radius(i)).fold(f64::INFINITY, f64::min);
    let mut hi = (0..k).map(|i| alpha[i] + radius(i)).fold(f64::NEG_INFINITY, f64::max);
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    while hi - lo > 4.0 * f64::EPSILON * scale {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(&alpha[..k], beta, mid) == k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let theta = hi;
    if k == 1 {
        return (theta, 1.0);
    }
    // Inverse iteration on the positive definite σI − T with σ just above θ.
    let sigma = theta + 1e-10 * scale;
    let mut y = vec![1.0; k];
    for _ in 0..3 {
        y = solve_shifted(alpha, beta, sigma, &y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        y.iter_mut().for_each(|v| *v /= norm);
    }
    (theta, y[k - 1])
}

/// Solves `(σI − T) y = r` by LDLᵀ without pivoting.
fn solve_shifted(alpha: &[f64], beta: &[f64], sigma: f64, r: &[f64]) -> Vec<f64> {
    let k = alpha.len();
    let mut d = vec![0.0; k];
    let mut l = vec![0.0; k];
    let mut z = vec![0.0; k];
    d[0] = sigma - alpha[0];
    z[0] = r[0];
    for i in 1..k {
        l[i] = -beta[i - 1] / d[i - 1];
        d[i] = sigma - alpha[i] - l[i] * -beta[i - 1];
        z[i] = r[i] - l[i] * z[i - 1];
    }
    let mut y = vec![0.0; k];
    y[k - 1] = z[k - 1] / d[k - 1];
    for i in (0..k - 1).rev() {
        y[i] = z[i] / d[i] - l[i + 1] * y[i + 1];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use speckle_core::cxla::RealCholesky;
    use speckle_core::sensing::haar_partial;

    #[test]
    fn tridiagonal_top_eigenpair() {
        // 2×2: [[2, 1], [1, 2]] has eigenvalues 1 and 3, top vector (1, 1)/√2.
        let (theta, last) = top_ritz(&[2.0, 2.0], &[1.0]);
        assert!((theta - 3.0).abs() < 1e-12);
        assert!((last.abs() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        // Path-graph Laplacian-like matrix with known spectrum 2 − 2cos(jπ/(k+1)).
        let k = 30;
        let (theta, _) = top_ritz(&vec![2.0; k], &vec![-1.0; k - 1]);
        let expect = 2.0 - 2.0 * (k as f64 * std::f64::consts::PI / (k + 1) as f64).cos();
        assert!((theta - expect).abs() < 1e-12);
        assert_eq!(top_ritz(&[0.7], &[]), (0.7, 1.0));
    }

    /// Largest eigenvalue of `C⁻¹B` from real embeddings, by power iteration
    /// on the symmetric `L⁻¹ B L⁻ᵀ`.
    fn dense_top(a: &ComplexMat, x: &Array1<f64>, d: &Array1<f64>) -> f64 {
        let embed = |w: &Array1<f64>| {
            let (re, im) = weighted_gram(a, w.view()).unwrap();
            speckle_core::cxla::block_embed(&re, &im)
        };
        let c = embed(&x.mapv(|v| v * v));
        let b = embed(d);
        let ch = RealCholesky::factor(&c).unwrap();
        let cinv = ch.inverse();
        let prod = cinv.dot(&b);
        let mut v = Array1::from_elem(prod.nrows(), 1.0);
        let mut lam = 0.0;
        for _ in 0..5000 {
            let w = prod.dot(&v);
            lam = w.dot(&c.dot(&v)) / v.dot(&c.dot(&v));
            v = &w / w.iter().map(|z| z * z).sum::<f64>().sqrt();
        }
        lam
    }

    #[test]
    fn lanczos_matches_dense_power_iteration() {
        let (m, n) = (12, 24);
        let a = haar_partial(m, n, 4).unwrap();
        let mut rng = stream_rng(9, 0);
        let x = Array1::from_shape_fn(n, |_| rng.random_range(0.05..1.0));
        let op = WhitenedSensing::new(&a, x.view()).unwrap();
        let deltas = [0.05, 0.3, 0.6];
        let weights = Array2::from_shape_fn((n, deltas.len()), |(i, t)| {
            let s = if (i * 7 + t) % 3 == 0 { -1.0 } else { 1.0 };
            (x[i] + s * deltas[t]).powi(2)
        });
        let tops = classify_top_eigenvalues(&op, weights.view(), f64::INFINITY, m, 1).unwrap();
        for (t, top) in tops.iter().enumerate() {
            let dense = dense_top(&a, &x, &weights.column(t).to_owned());
            assert!(top.value <= dense * (1.0 + 1e-10), "trial {t}: Ritz value {} above {dense}", top.value);
            assert!(dense - top.value <= top.residual + 1e-10, "trial {t}: {} vs {dense}, bound {}", top.value, top.residual);
            assert!(top.residual <= CONVERGED_RESIDUAL * top.value);
            assert_eq!(top.verdict, Verdict::Below);
        }
    }

    #[test]
    fn identity_perturbation_has_unit_spectrum() {
        let a = haar_partial(6, 10, 2).unwrap();
        let x = Array1::from_elem(10, 0.5);
        let op = WhitenedSensing::new(&a, x.view()).unwrap();
        let w = Array2::from_elem((10, 2), 0.25);
        for top in classify_top_eigenvalues(&op, w.view(), 2.0, 6, 0).unwrap() {
            assert!((top.value - 1.0).abs() < 1e-12);
            assert_eq!(top.verdict, Verdict::Below);
        }
        let doubled = Array2::from_elem((10, 1), 0.75);
        let top = classify_top_eigenvalues(&op, doubled.view(), 2.0, 6, 0).unwrap()[0];
        assert_eq!(top.verdict, Verdict::Above);
        assert!((top.value - 3.0).abs() < 1e-12);
    }
}
