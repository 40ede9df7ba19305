use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam moments over a fixed list of parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    /// Zeroed state for buffers of the given lengths.
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Nothing is modified if any gradient is non-finite or the
    /// buffers do not match the state.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::dim("Adam::step buffers", self.first.len(), params.len().max(grads.len())));
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.first).enumerate() {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::dim("Adam::step buffer length", m.len(), p.len().max(g.len())));
            }
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::numerical(
                    format!("non-finite gradient in buffer {i} at index {k}: {}", g[k]),
                    None,
                ));
            }
        }
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Validation(format!("learning rate must be finite and non-negative, got {lr}")));
        }
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::new(&[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.0; 3];
        adam.step(&mut [&mut p], &[&g], 0.001).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(&[1]);
        let mut p = vec![0.0];
        adam.step(&mut [&mut p], &[&[1.0]], 0.001).unwrap();
        assert!((p[0] + 0.001 / (1.0 + EPSILON)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_without_change() {
        let mut adam = Adam::new(&[2]);
        let mut p = vec![1.0, 1.0];
        let err = adam.step(&mut [&mut p], &[&[0.1, f64::NAN]], 0.01).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn quadratic_descent_is_monotone_after_second_step() {
        // Scalar reference: f(p) = (p − 3)², recomputed by hand below.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let (mut p_ref, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut adam = Adam::new(&[1]);
        let mut p = vec![0.0];
        let mut losses = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * (p[0] - 3.0);
            adam.step(&mut [&mut p], &[&[g]], lr).unwrap();
            let g_ref = 2.0 * (p_ref - 3.0);
            m = b1 * m + (1.0 - b1) * g_ref;
            v = b2 * v + (1.0 - b2) * g_ref * g_ref;
            p_ref -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            assert!((p[0] - p_ref).abs() < 1e-14);
            losses.push((p[0] - 3.0).powi(2));
        }
        for w in losses[1..].windows(2) {
            assert!(w[1] < w[0]);
        }
    }
}
