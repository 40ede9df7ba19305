use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Singular values (descending) by one-sided Jacobi rotations.
pub fn singular_values(a: ArrayView2<f64>) -> Result<Array1<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("matrix contains non-finite values".into()));
    }
    // Rotate the columns of the orientation with fewer columns; store them
    // as rows so every inner product is contiguous.
    let cols: Array2<f64> = if a.nrows() >= a.ncols() {
        a.t().to_owned()
    } else {
        a.to_owned()
    };
    let mut w = cols.as_standard_layout().to_owned();
    let k = w.nrows();
    let len = w.ncols();
    let tol = 1e-15;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let (alpha, beta, gamma) = {
                    let wp = w.row(p);
                    let wq = w.row(q);
                    (wp.dot(&wp), wq.dot(&wq), wp.dot(&wq))
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for idx in 0..len {
                    let x = w[[p, idx]];
                    let y = w[[q, idx]];
                    w[[p, idx]] = c * x - s * y;
                    w[[q, idx]] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numerical(
            format!("Jacobi SVD did not converge in {MAX_SWEEPS} sweeps"),
            None,
        ));
    }
    let mut sv: Vec<f64> = w.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(Array1::from(sv))
}

/// Extremal singular values `(σ_min, σ_max)`.
pub fn spectral_bounds(a: ArrayView2<f64>) -> Result<(f64, f64)> {
    if a.is_empty() {
        return Err(Error::Validation("empty matrix".into()));
    }
    let sv = singular_values(a)?;
    Ok((sv[sv.len() - 1], sv[0]))
}
