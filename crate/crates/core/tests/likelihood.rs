mod common;

use common::*;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use speckle_core::cxla::{assemble_b, exact_inverse, ComplexMat};
use speckle_core::likelihood::{eval_f_real, eval_fl, eval_fl_exact, grad_f_real, grad_fl};
use speckle_core::sensing::{gaussian_matrix, haar_partial, simulate, MeasurementEnsemble};

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-5;

/// Random complex instance with `m ≤ n ≤ 64`, `L ≤ 4`.
fn complex_instance(seed: u64) -> (Array1<f64>, MeasurementEnsemble) {
    let mut r = rng(seed);
    let n = r.random_range(4..=64);
    let m = r.random_range(2..=(n / 2).clamp(2, 32));
    let looks = r.random_range(1..=4);
    let scene = Array1::from_shape_fn(n, |_| r.random_range(0.2..1.0));
    let a = haar_partial(m, n, seed).unwrap();
    let ens = simulate(scene.view(), &a, looks, 1.0, r.random_range(0.0..0.3), seed + 7).unwrap();
    let x = Array1::from_shape_fn(n, |_| r.random_range(0.2..1.0));
    (x, ens)
}

/// The covariance of `[Re y; Im y]` built entry by entry from the model:
/// half of the embedding of `σ_z² I + σ_w² A X² Aᴴ`.
fn dense_b(x: &Array1<f64>, ens: &MeasurementEnsemble) -> Array2<f64> {
    let a = ens.a();
    let (m, n) = (a.rows(), a.cols());
    let h = ComplexMat::from_fn(m, m, |i, j| {
        let mut acc = num_complex::Complex64::new(0.0, 0.0);
        for k in 0..n {
            acc += a.get(i, k) * (x[k] * x[k] * ens.sigma_w().powi(2)) * a.get(j, k).conj();
        }
        if i == j {
            acc += ens.sigma_z().powi(2);
        }
        acc
    });
    embed(&h) * 0.5
}

fn dense_fl(x: &Array1<f64>, ens: &MeasurementEnsemble) -> f64 {
    let b = dense_b(x, ens);
    let (inv, logdet) = gauss_jordan(&b);
    let quad: f64 = (0..ens.num_looks())
        .map(|l| {
            let y = stack(&ens.look(l));
            y.dot(&inv.dot(&y))
        })
        .sum();
    logdet + quad / ens.num_looks() as f64
}

fn central_difference(f: impl Fn(&Array1<f64>) -> f64, x: &Array1<f64>) -> Array1<f64> {
    Array1::from_shape_fn(x.len(), |j| {
        let mut up = x.clone();
        up[j] += FD_STEP;
        let mut down = x.clone();
        down[j] -= FD_STEP;
        (f(&up) - f(&down)) / (2.0 * FD_STEP)
    })
}

#[test]
fn complex_value_matches_dense_oracle() {
    for seed in 0..6 {
        let (x, ens) = complex_instance(seed);
        let ours = eval_fl_exact(x.view(), &ens).unwrap();
        let oracle = dense_fl(&x, &ens);
        assert!((ours - oracle).abs() <= 1e-10 * oracle.abs().max(1.0), "seed {seed}: {ours} vs {oracle}");
    }
    let a = haar_partial(2, 4, 1).unwrap();
    let ens = simulate(Array1::from_elem(4, 0.5).view(), &a, 3, 1.0, 0.1, 2).unwrap();
    let x = Array1::from(vec![0.3, 0.6, 0.9, 0.4]);
    assert!((eval_fl_exact(x.view(), &ens).unwrap() - dense_fl(&x, &ens)).abs() <= 1e-10);
}

#[test]
fn value_with_identity_covariance_is_mean_energy() {
    // x = 0 and σ_z = √2 give B = I on the real embedding.
    let a = haar_partial(3, 5, 4).unwrap();
    let ens = simulate(Array1::from_elem(5, 0.4).view(), &a, 3, 1.0, std::f64::consts::SQRT_2, 8).unwrap();
    let energy: f64 = (0..3).map(|l| stack(&ens.look(l)).mapv(|v| v * v).sum()).sum::<f64>() / 3.0;
    let value = eval_fl_exact(Array1::zeros(5).view(), &ens).unwrap();
    assert!((value - energy).abs() <= 1e-12);
}

#[test]
fn tracked_and_exact_values_agree_for_exact_inverse() {
    let (x, ens) = complex_instance(11);
    let (sw, sz) = ens.component_sigmas();
    let inv = exact_inverse(&assemble_b(x.view(), ens.a(), sw, sz).unwrap()).unwrap();
    let a = eval_fl(x.view(), &inv, &ens).unwrap();
    let b = eval_fl_exact(x.view(), &ens).unwrap();
    assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
}

#[test]
fn complex_gradient_matches_finite_differences_on_twenty_instances() {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (x, ens) = complex_instance(100 + seed);
        let (sw, sz) = ens.component_sigmas();
        let inv = exact_inverse(&assemble_b(x.view(), ens.a(), sw, sz).unwrap()).unwrap();
        let g = grad_fl(x.view(), &inv, &ens).unwrap();
        let fd = central_difference(|p| eval_fl_exact(p.view(), &ens).unwrap(), &x);
        let floor = 1e-3 * g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let rel = max_rel_err(&g, &fd, floor);
        worst = worst.max(rel);
        assert!(rel <= FD_TOL, "seed {seed} (n={}, m={}): rel {rel:e}", ens.n(), ens.m());
    }
    eprintln!("complex gradient: worst relative error {worst:.2e}");
}

#[test]
fn complex_gradient_matches_real_block_form() {
    for seed in 0..4 {
        let (x, ens) = complex_instance(300 + seed);
        let (m, n) = (ens.m(), ens.n());
        let (sw, sz) = ens.component_sigmas();
        let inv = exact_inverse(&assemble_b(x.view(), ens.a(), sw, sz).unwrap()).unwrap();
        let g = grad_fl(x.view(), &inv, &ens).unwrap();
        let (binv, _) = gauss_jordan(&dense_b(&x, &ens));
        let w2 = sw * sw;
        let looks: Vec<Array1<f64>> = (0..ens.num_looks()).map(|l| binv.dot(&stack(&ens.look(l)))).collect();
        for j in 0..n {
            let aj = ens.a().column(j);
            let plus = Array1::from_shape_fn(2 * m, |i| if i < m { aj[i].re } else { aj[i - m].im });
            let minus = Array1::from_shape_fn(2 * m, |i| if i < m { -aj[i].im } else { aj[i - m].re });
            let diag = plus.dot(&binv.dot(&plus)) + minus.dot(&binv.dot(&minus));
            let data: f64 = looks.iter().map(|by| plus.dot(by).powi(2) + minus.dot(by).powi(2)).sum();
            let block = 2.0 * x[j] * w2 * diag - 2.0 * x[j] * w2 * data / ens.num_looks() as f64;
            assert!((block - g[j]).abs() <= 1e-10 * g[j].abs().max(1.0), "seed {seed} pixel {j}: {block} vs {}", g[j]);
        }
    }
}

#[test]
fn value_depends_on_magnitudes_only() {
    let (x, ens) = complex_instance(21);
    let mut r = rng(5);
    let signed = x.mapv(|v| if r.random_bool(0.5) { -v } else { v });
    let a = eval_fl_exact(x.view(), &ens).unwrap();
    let b = eval_fl_exact(signed.view(), &ens).unwrap();
    assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
}

#[test]
fn block_and_complex_representations_agree() {
    for seed in 0..4 {
        let (x, ens) = complex_instance(400 + seed);
        let (sw, sz) = ens.component_sigmas();
        let b = assemble_b(x.view(), ens.a(), sw, sz).unwrap();
        let dense = b.to_dense();
        let chol = speckle_core::cxla::RealCholesky::factor(&dense).unwrap();
        let quad: f64 = (0..ens.num_looks())
            .map(|l| {
                let y = stack(&ens.look(l));
                y.dot(&chol.solve(y.view()))
            })
            .sum();
        let block = chol.log_det() + quad / ens.num_looks() as f64;
        let complex = eval_fl_exact(x.view(), &ens).unwrap();
        assert!((block - complex).abs() <= 1e-10 * complex.abs().max(1.0));
    }
}

#[test]
fn single_pixel_grid_minimum_sits_at_the_truth() {
    let truth = 0.37;
    let ens = simulate(Array1::from(vec![truth]).view(), &ComplexMat::identity(1), 20_000, 1.0, 0.0, 3).unwrap();
    let grid: Vec<f64> = (0..=200).map(|k| 1e-3 + k as f64 * (1.0 - 1e-3) / 200.0).collect();
    let step = grid[1] - grid[0];
    let best = grid
        .iter()
        .copied()
        .min_by(|a, b| {
            let fa = eval_fl_exact(Array1::from(vec![*a]).view(), &ens).unwrap();
            let fb = eval_fl_exact(Array1::from(vec![*b]).view(), &ens).unwrap();
            fa.total_cmp(&fb)
        })
        .unwrap();
    assert!((best - truth).abs() <= step, "grid minimum {best} vs truth {truth}");
}

/// Random real instance: Gaussian `A / √n`, looks `A (x ∘ w) + z`.
fn real_instance(seed: u64) -> (Array1<f64>, Array2<f64>, Array2<f64>, f64, f64) {
    let mut r = rng(seed);
    let n = r.random_range(4..=64);
    let m = r.random_range(2..=(n / 2).clamp(2, 32));
    let looks = r.random_range(1..=4);
    let a = gaussian_matrix(m, n, seed) / (n as f64).sqrt();
    let scene = Array1::from_shape_fn(n, |_| r.random_range(0.2..1.0));
    let (sw, sz) = (1.0, 0.2);
    let y = Array2::from_shape_fn((m, looks), |_| 0.0);
    let mut y = y;
    for l in 0..looks {
        let w = Array1::from_shape_fn(n, |i| scene[i] * sw * r.sample::<f64, _>(StandardNormal));
        let z = Array1::from_shape_fn(m, |_| sz * r.sample::<f64, _>(StandardNormal));
        y.column_mut(l).assign(&(a.dot(&w) + z));
    }
    let x = Array1::from_shape_fn(n, |_| r.random_range(0.2..1.0));
    (x, a, y, sw, sz)
}

#[test]
fn real_gradient_matches_finite_differences_on_twenty_instances() {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (x, a, y, sw, sz) = real_instance(700 + seed);
        let g = grad_f_real(x.view(), a.view(), y.view(), sw, sz).unwrap();
        let fd = central_difference(|p| eval_f_real(p.view(), a.view(), y.view(), sw, sz).unwrap(), &x);
        let floor = 1e-3 * g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let rel = max_rel_err(&g, &fd, floor);
        worst = worst.max(rel);
        assert!(rel <= FD_TOL, "seed {seed}: rel {rel:e}");
    }
    eprintln!("real gradient: worst relative error {worst:.2e}");
}

#[test]
fn real_value_matches_dense_oracle_and_parity() {
    let (x, a, y, sw, sz) = real_instance(9);
    let m = a.nrows();
    let mut sigma = a.dot(&Array2::from_diag(&x.mapv(|v| sw * sw * v * v))).dot(&a.t());
    for i in 0..m {
        sigma[[i, i]] += sz * sz;
    }
    let (inv, logdet) = gauss_jordan(&sigma);
    let quad: f64 = y.columns().into_iter().map(|c| c.dot(&inv.dot(&c))).sum();
    let oracle = logdet + quad / y.ncols() as f64;
    let ours = eval_f_real(x.view(), a.view(), y.view(), sw, sz).unwrap();
    assert!((ours - oracle).abs() <= 1e-10 * oracle.abs().max(1.0));

    let neg = -&x;
    let f_neg = eval_f_real(neg.view(), a.view(), y.view(), sw, sz).unwrap();
    assert!((ours - f_neg).abs() <= 1e-12 * ours.abs().max(1.0));
    let g = grad_f_real(x.view(), a.view(), y.view(), sw, sz).unwrap();
    let g_neg = grad_f_real(neg.view(), a.view(), y.view(), sw, sz).unwrap();
    for j in 0..x.len() {
        assert!((g[j] + g_neg[j]).abs() <= 1e-10 * g[j].abs().max(1.0));
    }
}

#[test]
fn real_value_at_zero_is_mean_energy() {
    let (_, a, y, _, _) = real_instance(13);
    let zero = Array1::zeros(a.ncols());
    let value = eval_f_real(zero.view(), a.view(), y.view(), 1.0, 1.0).unwrap();
    let energy = y.mapv(|v| v * v).sum() / y.ncols() as f64;
    assert!((value - energy).abs() <= 1e-12 * energy.max(1.0));
    let g = grad_f_real(zero.view(), a.view(), y.view(), 1.0, 1.0).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn non_pd_covariance_is_reported() {
    let a = haar_partial(3, 6, 2).unwrap();
    let ens = simulate(Array1::from_elem(6, 0.5).view(), &a, 2, 1.0, 0.0, 2).unwrap();
    assert!(matches!(
        eval_fl_exact(Array1::zeros(6).view(), &ens),
        Err(speckle_core::Error::Numerical { .. })
    ));
}
