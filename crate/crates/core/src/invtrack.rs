//! Tracking `B(x_t)⁻¹` across gradient iterations.
//!
//! The inverse is recomputed exactly on the first update and whenever the
//! estimate moved by more than `delta_threshold` in the ∞-norm; otherwise
//! the previous inverse is refined by one Newton-Schulz step.

use ndarray::{Array1, ArrayView1};

use crate::cxla::{assemble_b, defect_norm, exact_inverse, newton_schulz_step, ComplexMat, HermitianInverse};
use crate::error::{Error, Result};

/// Threshold on `‖x_t − x_{t−1}‖_∞` above which the inverse is recomputed.
pub const DEFAULT_DELTA_THRESHOLD: f64 = 0.12;

/// How the tracker refreshes its inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversePolicy {
    /// Exact on the first call and on large jumps, Newton-Schulz otherwise.
    Tracked,
    /// Exact inversion on every call.
    AlwaysExact,
    /// Tracked for the first `n` calls, then the inverse is never updated.
    FrozenAfter(usize),
}

/// Which path the last [`InverseTracker::update`] took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Exact,
    NewtonSchulz,
    Frozen,
}

#[derive(Debug, Clone)]
pub struct InverseTracker {
    current: Option<HermitianInverse>,
    last_x: Option<Array1<f64>>,
    delta_threshold: f64,
    ns_steps: usize,
    policy: InversePolicy,
    updates: usize,
    exact_count: usize,
    ns_count: usize,
}

impl InverseTracker {
    pub fn new(delta_threshold: f64) -> Result<Self> {
        if !(delta_threshold > 0.0) {
            return Err(Error::Validation(format!(
                "delta threshold must be positive, got {delta_threshold}"
            )));
        }
        Ok(Self {
            current: None,
            last_x: None,
            delta_threshold,
            ns_steps: 1,
            policy: InversePolicy::Tracked,
            updates: 0,
            exact_count: 0,
            ns_count: 0,
        })
    }

    pub fn with_policy(mut self, policy: InversePolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Newton-Schulz steps per non-exact update (default 1).
    pub fn with_ns_steps(mut self, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Validation("at least one Newton-Schulz step is required".into()));
        }
        self.ns_steps = steps;
        Ok(self)
    }

    pub fn delta_threshold(&self) -> f64 {
        self.delta_threshold
    }

    pub fn policy(&self) -> InversePolicy {
        self.policy
    }

    pub fn exact_count(&self) -> usize {
        self.exact_count
    }

    pub fn ns_count(&self) -> usize {
        self.ns_count
    }

    pub fn current(&self) -> Option<&HermitianInverse> {
        self.current.as_ref()
    }

    /// Refreshes the inverse for the estimate `x_new` and returns it.
    pub fn update(
        &mut self,
        x_new: ArrayView1<f64>,
        a: &ComplexMat,
        sigma_w: f64,
        sigma_z: f64,
    ) -> Result<(&HermitianInverse, UpdateKind)> {
        let frozen = matches!(self.policy, InversePolicy::FrozenAfter(k) if self.updates >= k);
        let kind = match (&self.current, &self.last_x) {
            (Some(_), Some(_)) if frozen => UpdateKind::Frozen,
            (Some(_), Some(last)) if self.policy != InversePolicy::AlwaysExact => {
                if last.len() != x_new.len() {
                    return Err(Error::dim("InverseTracker::update", last.len(), x_new.len()));
                }
                let jump = last
                    .iter()
                    .zip(x_new.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if jump > self.delta_threshold || !jump.is_finite() {
                    UpdateKind::Exact
                } else {
                    UpdateKind::NewtonSchulz
                }
            }
            _ => UpdateKind::Exact,
        };
        match kind {
            UpdateKind::Frozen => {}
            UpdateKind::Exact => {
                let b = assemble_b(x_new, a, sigma_w, sigma_z)?;
                self.current = Some(exact_inverse(&b)?);
                self.exact_count += 1;
            }
            UpdateKind::NewtonSchulz => {
                let b = assemble_b(x_new, a, sigma_w, sigma_z)?;
                let mut m = self.current.take().expect("checked above");
                for _ in 0..self.ns_steps {
                    m = newton_schulz_step(&b, &m)?;
                }
                self.current = Some(m);
                self.ns_count += 1;
            }
        }
        self.updates += 1;
        if kind != UpdateKind::Frozen {
            self.last_x = Some(x_new.to_owned());
        }
        Ok((self.current.as_ref().expect("set above"), kind))
    }

    /// `‖I − M·B(x)‖_F / √(2m)` on the real 2m×2m embedding.
    pub fn residual(&self, x: ArrayView1<f64>, a: &ComplexMat, sigma_w: f64, sigma_z: f64) -> Result<f64> {
        let m = self
            .current
            .as_ref()
            .ok_or_else(|| Error::Usage("tracker has not been updated yet".into()))?;
        let b = assemble_b(x, a, sigma_w, sigma_z)?;
        Ok(defect_norm(&b, m)? / ((2 * b.dim()) as f64).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::haar_partial;
    use approx::assert_abs_diff_eq;

    fn setup() -> (ComplexMat, Array1<f64>) {
        let a = haar_partial(4, 8, 3).unwrap();
        let x = Array1::from(vec![0.3, 0.8, 0.5, 0.9, 0.2, 0.6, 0.4, 0.7]);
        (a, x)
    }

    #[test]
    fn first_update_is_exact() {
        let (a, x) = setup();
        let mut t = InverseTracker::new(DEFAULT_DELTA_THRESHOLD).unwrap();
        let (_, kind) = t.update(x.view(), &a, 1.0, 0.0).unwrap();
        assert_eq!(kind, UpdateKind::Exact);
        assert_eq!(t.exact_count(), 1);
        assert_eq!(t.ns_count(), 0);
        assert!(t.residual(x.view(), &a, 1.0, 0.0).unwrap() <= 1e-8);
    }

    #[test]
    fn unchanged_estimate_is_fixed_point() {
        let (a, x) = setup();
        let mut t = InverseTracker::new(DEFAULT_DELTA_THRESHOLD).unwrap();
        let exact = t.update(x.view(), &a, 1.0, 0.0).unwrap().0.clone();
        let (next, kind) = t.update(x.view(), &a, 1.0, 0.0).unwrap();
        assert_eq!(kind, UpdateKind::NewtonSchulz);
        let scale = exact.to_dense().iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = (next.to_dense() - exact.to_dense()).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff <= 1e-12 * scale, "relative change {}", diff / scale);
    }

    #[test]
    fn large_jump_triggers_exact() {
        let (a, x) = setup();
        let mut t = InverseTracker::new(DEFAULT_DELTA_THRESHOLD).unwrap();
        t.update(x.view(), &a, 1.0, 0.0).unwrap();
        let mut moved = x.clone();
        moved[3] -= 0.2;
        let (_, kind) = t.update(moved.view(), &a, 1.0, 0.0).unwrap();
        assert_eq!(kind, UpdateKind::Exact);
        assert_eq!(t.exact_count(), 2);
        let mut small = moved.clone();
        small[0] += 0.05;
        let (_, kind) = t.update(small.view(), &a, 1.0, 0.0).unwrap();
        assert_eq!(kind, UpdateKind::NewtonSchulz);
    }

    #[test]
    fn frozen_policy_stops_updating() {
        let (a, x) = setup();
        let mut t = InverseTracker::new(DEFAULT_DELTA_THRESHOLD)
            .unwrap()
            .with_policy(InversePolicy::FrozenAfter(2));
        t.update(x.view(), &a, 1.0, 0.0).unwrap();
        t.update(x.view(), &a, 1.0, 0.0).unwrap();
        let before = t.current().unwrap().clone();
        let moved = x.mapv(|v| v * 0.5);
        let (after, kind) = t.update(moved.view(), &a, 1.0, 0.0).unwrap();
        assert_eq!(kind, UpdateKind::Frozen);
        assert_eq!(after, &before);
    }

    #[test]
    fn always_exact_policy() {
        let (a, x) = setup();
        let mut t = InverseTracker::new(DEFAULT_DELTA_THRESHOLD)
            .unwrap()
            .with_policy(InversePolicy::AlwaysExact);
        for _ in 0..3 {
            t.update(x.view(), &a, 1.0, 0.0).unwrap();
        }
        assert_eq!((t.exact_count(), t.ns_count()), (3, 0));
    }

    #[test]
    fn rejects_nonpositive_threshold() {
        assert!(InverseTracker::new(0.0).is_err());
        assert!(InverseTracker::new(-1.0).is_err());
    }

    #[test]
    fn residual_before_update_is_usage_error() {
        let (a, x) = setup();
        let t = InverseTracker::new(0.1).unwrap();
        assert!(matches!(t.residual(x.view(), &a, 1.0, 0.0), Err(Error::Usage(_))));
    }

    #[test]
    fn residual_of_half_identity() {
        let a = ComplexMat::identity(3);
        let x = Array1::from_elem(3, 1.0);
        let mut t = InverseTracker::new(0.1).unwrap();
        t.current = Some(HermitianInverse::identity(3).scaled(0.5));
        assert_abs_diff_eq!(t.residual(x.view(), &a, 1.0, 0.0).unwrap(), 0.5, epsilon = 1e-15);
    }
}
