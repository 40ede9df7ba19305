mod common;

use common::*;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use speckle_core::cxla::{
    assemble_b, defect_norm, exact_inverse, newton_schulz_step, singular_values, spectral_bounds, BlockCovariance,
    ComplexMat, HermitianInverse, RealCholesky,
};
use speckle_core::sensing::haar_partial;

/// Hermitian positive definite `G Gᴴ / m + shift·I` as a block covariance.
fn random_block_pd(m: usize, shift: f64, seed: u64) -> BlockCovariance {
    let mut r = rng(seed);
    let g = complex_gaussian(m, m, &mut r);
    let h = g.matmul(&g.conj_transpose()).unwrap();
    let s = Array2::from_shape_fn((m, m), |(i, j)| {
        let v = 0.5 * (h.get(i, j).re + h.get(j, i).re) / m as f64;
        if i == j { v + shift } else { v }
    });
    let t = Array2::from_shape_fn((m, m), |(i, j)| 0.5 * (h.get(i, j).im - h.get(j, i).im) / m as f64);
    BlockCovariance::from_blocks(s, t).unwrap()
}

#[test]
fn assemble_b_matches_entrywise_definition() {
    let mut r = rng(1);
    let a = complex_gaussian(4, 8, &mut r);
    let x = Array1::from_shape_fn(8, |_| r.random_range(-1.0..1.0));
    let (sw, sz) = (0.8, 0.3);
    let b = assemble_b(x.view(), &a, sw, sz).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..8 {
                acc += a.get(i, k) * x[k] * x[k] * a.get(j, k).conj();
            }
            let expect_s = sw * sw * acc.re + if i == j { sz * sz } else { 0.0 };
            assert!((b.s()[[i, j]] - expect_s).abs() <= 1e-13, "S[{i},{j}]");
            assert!((b.t()[[i, j]] - sw * sw * acc.im).abs() <= 1e-13, "T[{i},{j}]");
        }
    }
}

#[test]
fn assemble_b_trivial_cases() {
    let a = haar_partial(3, 5, 2).unwrap();
    let b = assemble_b(Array1::zeros(5).view(), &a, 1.0, 1.0).unwrap();
    assert_eq!(b.s(), &Array2::<f64>::eye(3));
    assert!(b.t().iter().all(|&v| v == 0.0));

    let one = ComplexMat::identity(1);
    let b = assemble_b(Array1::from(vec![2.0]).view(), &one, 1.0, 0.0).unwrap();
    assert_eq!(b.s()[[0, 0]], 4.0);
    assert_eq!(b.t()[[0, 0]], 0.0);

    assert!(assemble_b(Array1::zeros(4).view(), &a, 1.0, 0.0).is_err());
    assert!(assemble_b(Array1::from(vec![f64::NAN; 5]).view(), &a, 1.0, 0.0).is_err());
}

#[test]
fn exact_inverse_matches_dense_oracle() {
    for seed in 0..5 {
        let b = random_block_pd(6, 0.2, 100 + seed);
        let inv = exact_inverse(&b).unwrap();
        let (oracle, _) = gauss_jordan(&b.to_dense());
        let diff = frobenius(&(&inv.to_dense() - &oracle)) / frobenius(&oracle);
        assert!(diff <= 1e-9, "seed {seed}: rel err {diff:e}");
        let resid = &inv.to_dense().dot(&b.to_dense()) - &Array2::<f64>::eye(12);
        assert!(frobenius(&resid) <= 1e-8 * frobenius(&oracle));
        assert!(inv.structure_defect() <= 1e-9);
    }
}

#[test]
fn exact_inverse_trivial_cases() {
    let inv = exact_inverse(&BlockCovariance::identity(4)).unwrap();
    assert_eq!(inv.u(), &Array2::<f64>::eye(4));
    assert!(inv.v().iter().all(|&v| v == 0.0));

    let b = BlockCovariance::from_blocks(Array2::from_elem((1, 1), 2.0), Array2::zeros((1, 1))).unwrap();
    let inv = exact_inverse(&b).unwrap();
    assert!((inv.u()[[0, 0]] - 0.5).abs() <= 1e-15);
    assert_eq!(inv.v()[[0, 0]], 0.0);
}

#[test]
fn singular_input_is_numerical_error_with_condition() {
    let s = Array2::from_shape_vec((2, 2), vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let b = BlockCovariance::from_blocks(s, Array2::zeros((2, 2))).unwrap();
    match exact_inverse(&b) {
        Err(speckle_core::Error::Numerical { rcond, .. }) => assert!(rcond.is_some()),
        other => panic!("expected numerical error, got {other:?}"),
    }
}

/// `I − M·B` on the dense 2m×2m embedding.
fn dense_defect(b: &BlockCovariance, m: &HermitianInverse) -> Array2<f64> {
    let k = 2 * b.dim();
    Array2::<f64>::eye(k) - m.to_dense().dot(&b.to_dense())
}

#[test]
fn newton_schulz_squares_the_defect_on_fifty_instances() {
    let mut worst = 0.0f64;
    for trial in 0..50u64 {
        let mut r = rng(500 + trial);
        let m = r.random_range(1..=16);
        let b = random_block_pd(m, 0.1 + r.random_range(0.0..1.0), 1000 + trial);
        // Start well away from the inverse so the squared defect is O(1).
        let exact = exact_inverse(&b).unwrap();
        let pert = random_block_pd(m, 0.0, 2000 + trial);
        let start = HermitianInverse::from_blocks(
            exact.u() * 0.7 + pert.s() * 0.05,
            exact.v() * 0.7 + pert.t() * 0.05,
        )
        .unwrap();
        let next = newton_schulz_step(&b, &start).unwrap();
        let e0 = dense_defect(&b, &start);
        let squared = e0.dot(&e0);
        let e1 = dense_defect(&b, &next);
        let rel = frobenius(&(&e1 - &squared)) / frobenius(&squared);
        worst = worst.max(rel);
        assert!(rel <= 1e-12, "trial {trial} (m={m}): rel {rel:e}");
        assert!(next.structure_defect() <= 1e-9);
    }
    eprintln!("newton-schulz identity: worst relative error {worst:.2e}");
}

#[test]
fn newton_schulz_examples() {
    let b = BlockCovariance::from_blocks(Array2::from_elem((1, 1), 2.0), Array2::zeros((1, 1))).unwrap();
    let m = HermitianInverse::from_blocks(Array2::from_elem((1, 1), 0.4), Array2::zeros((1, 1))).unwrap();
    let next = newton_schulz_step(&b, &m).unwrap();
    assert!((next.u()[[0, 0]] - 0.48).abs() < 1e-15);
    assert_eq!(next.v()[[0, 0]], 0.0);

    let id = newton_schulz_step(&BlockCovariance::identity(3), &HermitianInverse::identity(3)).unwrap();
    assert_eq!(id.u(), &Array2::<f64>::eye(3));

    // Perturbed exact inverse at m = 8: defect norms agree.
    let b = random_block_pd(8, 0.3, 77);
    let exact = exact_inverse(&b).unwrap();
    let start = exact.scaled(1.05);
    let next = newton_schulz_step(&b, &start).unwrap();
    let e0 = dense_defect(&b, &start);
    let lhs = frobenius(&dense_defect(&b, &next));
    let rhs = frobenius(&e0.dot(&e0));
    assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300) + 1e-15);
    assert!((defect_norm(&b, &next).unwrap() - lhs).abs() <= 1e-12);

    assert!(newton_schulz_step(&BlockCovariance::identity(2), &HermitianInverse::identity(3)).is_err());
}

#[test]
fn conjugate_transpose_is_an_involution() {
    let mut r = rng(9);
    let a = complex_gaussian(5, 7, &mut r);
    assert_eq!(a.conj_transpose().conj_transpose(), a);
}

#[test]
fn spectral_bounds_examples_and_oracle() {
    assert_eq!(spectral_bounds(Array2::<f64>::eye(5).view()).unwrap(), (1.0, 1.0));
    let d = Array2::from_diag(&Array1::from(vec![1.0, 2.0, 3.0]));
    let (lo, hi) = spectral_bounds(d.view()).unwrap();
    assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);

    let mut r = rng(3);
    for _ in 0..5 {
        let a = gaussian(10, 10, &mut r);
        let ev = jacobi_eigenvalues(&a.t().dot(&a));
        let sv = singular_values(a.view()).unwrap();
        for (k, s) in sv.iter().enumerate() {
            let oracle = ev[ev.len() - 1 - k].max(0.0).sqrt();
            assert!((s - oracle).abs() <= 1e-6 * oracle.max(1e-3), "sv {k}: {s} vs {oracle}");
        }
    }
    assert!(spectral_bounds(Array2::from_elem((2, 2), f64::INFINITY).view()).is_err());
}

#[test]
fn inverse_difference_eigenvalue_bound_on_hundred_pairs() {
    let mut r = rng(42);
    for trial in 0..100 {
        let n = r.random_range(2..=12);
        let b = random_spd(n, r.random_range(0.05..1.0), &mut r);
        let c = random_spd(n, r.random_range(0.05..1.0), &mut r);
        let diff_inv = RealCholesky::factor(&b).unwrap().inverse() - RealCholesky::factor(&c).unwrap().inverse();
        let sym = (&diff_inv + &diff_inv.t()) * 0.5;
        let lam = jacobi_eigenvalues(&sym);
        let worst = lam.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let (_, dmax) = spectral_bounds((&b - &c).view()).unwrap();
        let (bmin, _) = spectral_bounds(b.view()).unwrap();
        let (cmin, _) = spectral_bounds(c.view()).unwrap();
        let bound = dmax / (bmin * cmin);
        assert!(worst <= bound * (1.0 + 1e-10), "trial {trial}: |λ| {worst} > bound {bound}");
    }
}
