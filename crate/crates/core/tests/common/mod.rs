//! Independent dense oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use speckle_core::cxla::ComplexMat;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Inverse and log|det| of a real square matrix by Gauss-Jordan elimination
/// with partial pivoting.
pub fn gauss_jordan(a: &Array2<f64>) -> (Array2<f64>, f64) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    let mut logdet = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs())).unwrap();
        assert!(m[[p, c]].abs() > 1e-300, "singular matrix in oracle");
        if p != c {
            for k in 0..n {
                m.swap([p, k], [c, k]);
                inv.swap([p, k], [c, k]);
            }
        }
        let d = m[[c, c]];
        logdet += d.abs().ln();
        for k in 0..n {
            m[[c, k]] /= d;
            inv[[c, k]] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[[r, c]];
                if f != 0.0 {
                    for k in 0..n {
                        m[[r, k]] -= f * m[[c, k]];
                        inv[[r, k]] -= f * inv[[c, k]];
                    }
                }
            }
        }
    }
    (inv, logdet)
}

/// Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[[i, j]].powi(2)).sum();
        if off.sqrt() < 1e-15 * m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[[p, q]] == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Random symmetric positive definite matrix `G Gᵀ / n + shift·I`.
pub fn random_spd(n: usize, shift: f64, rng: &mut impl Rng) -> Array2<f64> {
    let g = gaussian(n, n, rng);
    g.dot(&g.t()) / n as f64 + Array2::<f64>::eye(n) * shift
}

pub fn complex_gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> ComplexMat {
    ComplexMat::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Real 2m×2m embedding `[[Re H, −Im H], [Im H, Re H]]` built entry by entry.
pub fn embed(h: &ComplexMat) -> Array2<f64> {
    let m = h.rows();
    let mut out = Array2::zeros((2 * m, 2 * m));
    for i in 0..m {
        for j in 0..m {
            let z = h.get(i, j);
            out[[i, j]] = z.re;
            out[[i, j + m]] = -z.im;
            out[[i + m, j]] = z.im;
            out[[i + m, j + m]] = z.re;
        }
    }
    out
}

/// `[Re v; Im v]`.
pub fn stack(v: &Array1<Complex64>) -> Array1<f64> {
    let m = v.len();
    Array1::from_shape_fn(2 * m, |i| if i < m { v[i].re } else { v[i - m].im })
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest componentwise relative error with a floor on the denominator.
pub fn max_rel_err(a: &Array1<f64>, b: &Array1<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
