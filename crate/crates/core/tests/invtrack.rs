mod common;

use common::*;
use ndarray::Array1;
use rand::Rng;
use speckle_core::cxla::{assemble_b, exact_inverse};
use speckle_core::invtrack::{InversePolicy, InverseTracker, UpdateKind, DEFAULT_DELTA_THRESHOLD};
use speckle_core::sensing::haar_partial;

fn scene(n: usize, seed: u64) -> Array1<f64> {
    let mut r = rng(seed);
    Array1::from_shape_fn(n, |_| r.random_range(0.2..0.9))
}

#[test]
fn first_update_is_exact_and_matches_direct_inverse() {
    let a = haar_partial(6, 12, 1).unwrap();
    let x = scene(12, 2);
    let mut t = InverseTracker::new(DEFAULT_DELTA_THRESHOLD).unwrap();
    assert!(t.current().is_none());
    let (inv, kind) = t.update(x.view(), &a, 0.7, 0.1).unwrap();
    assert_eq!(kind, UpdateKind::Exact);
    let direct = exact_inverse(&assemble_b(x.view(), &a, 0.7, 0.1).unwrap()).unwrap();
    assert_eq!(inv, &direct);
    assert_eq!((t.exact_count(), t.ns_count()), (1, 0));
}

#[test]
fn exact_inverse_is_a_newton_schulz_fixed_point() {
    let a = haar_partial(8, 16, 3).unwrap();
    let x = scene(16, 4);
    let mut t = InverseTracker::new(DEFAULT_DELTA_THRESHOLD).unwrap();
    let first = t.update(x.view(), &a, 0.7, 0.05).unwrap().0.clone();
    let (second, kind) = t.update(x.view(), &a, 0.7, 0.05).unwrap();
    assert_eq!(kind, UpdateKind::NewtonSchulz);
    let diff = frobenius(&(second.to_dense() - first.to_dense())) / frobenius(&first.to_dense());
    assert!(diff <= 1e-10, "drift {diff:e}");
    assert!(t.residual(x.view(), &a, 0.7, 0.05).unwrap() <= 1e-10);
}

#[test]
fn large_jump_triggers_exact_recompute() {
    let a = haar_partial(5, 10, 5).unwrap();
    let x = scene(10, 6);
    let mut t = InverseTracker::new(0.12).unwrap();
    t.update(x.view(), &a, 0.7, 0.1).unwrap();
    let mut moved = x.clone();
    moved[3] += 0.2;
    let (inv, kind) = t.update(moved.view(), &a, 0.7, 0.1).unwrap();
    assert_eq!(kind, UpdateKind::Exact);
    assert_eq!(inv, &exact_inverse(&assemble_b(moved.view(), &a, 0.7, 0.1).unwrap()).unwrap());

    let mut nudged = moved.clone();
    nudged[0] += 0.05;
    assert_eq!(t.update(nudged.view(), &a, 0.7, 0.1).unwrap().1, UpdateKind::NewtonSchulz);
    assert_eq!((t.exact_count(), t.ns_count()), (2, 1));
}

#[test]
fn small_steps_keep_the_residual_small_and_squaring() {
    let a = haar_partial(8, 16, 7).unwrap();
    let mut x = scene(16, 8);
    let mut t = InverseTracker::new(0.12).unwrap();
    t.update(x.view(), &a, 0.7, 0.05).unwrap();
    let mut r = rng(9);
    for _ in 0..5 {
        x.mapv_inplace(|v| v + r.random_range(-0.01..0.01));
        let before = {
            let mut probe = t.clone().with_policy(InversePolicy::FrozenAfter(0));
            probe.update(x.view(), &a, 0.7, 0.05).unwrap();
            probe.residual(x.view(), &a, 0.7, 0.05).unwrap()
        };
        t.update(x.view(), &a, 0.7, 0.05).unwrap();
        let after = t.residual(x.view(), &a, 0.7, 0.05).unwrap();
        // One step squares the defect: ‖E²‖ ≤ ‖E‖² in the normalised norm times √(2m).
        assert!(after <= before * before * (16f64).sqrt() + 1e-13, "{after:e} vs {before:e}");
        assert!(after < 1e-3);
    }
}

#[test]
fn policies_behave_as_named() {
    let a = haar_partial(4, 8, 11).unwrap();
    let x = scene(8, 12);
    let mut exact = InverseTracker::new(0.12).unwrap().with_policy(InversePolicy::AlwaysExact);
    for _ in 0..3 {
        assert_eq!(exact.update(x.view(), &a, 1.0, 0.1).unwrap().1, UpdateKind::Exact);
    }
    let mut frozen = InverseTracker::new(0.12).unwrap().with_policy(InversePolicy::FrozenAfter(2));
    let kinds: Vec<_> = (0..4).map(|_| frozen.update(x.view(), &a, 1.0, 0.1).unwrap().1).collect();
    assert_eq!(kinds, [UpdateKind::Exact, UpdateKind::NewtonSchulz, UpdateKind::Frozen, UpdateKind::Frozen]);
}

#[test]
fn residual_examples() {
    let a = haar_partial(3, 6, 13).unwrap();
    let x = scene(6, 14);
    let t = InverseTracker::new(0.12).unwrap();
    assert!(t.residual(x.view(), &a, 1.0, 0.1).is_err());
    assert!(InverseTracker::new(0.0).is_err());
    assert!(InverseTracker::new(0.1).unwrap().with_ns_steps(0).is_err());
}
