//! Adam with bias correction and global-norm clipping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::OptimizerConfig;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("gradient has {got} entries, parameters have {expected}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite gradient at index {0}; step skipped")]
    NonFinite(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn from_config(n: usize, c: &OptimizerConfig) -> Self {
        Self::new(n, c.lr, c.beta1, c.beta2, c.eps)
    }

    /// Rebuild a stored state; the moment arrays must have equal length.
    pub fn from_parts(
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self, OptimError> {
        if m.len() != v.len() {
            return Err(OptimError::Shape {
                expected: m.len(),
                got: v.len(),
            });
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            step,
            m,
            v,
        })
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update. A non-finite gradient leaves parameters and
    /// moments untouched and reports the offending index.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(OptimError::Shape {
                expected: self.m.len(),
                got: grads.len(),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(OptimError::NonFinite(i));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Scale `grads` so their Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut a = Adam::new(2, 1e-4, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -2.0];
        a.update(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(a.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -2.0, 1e3] {
            let mut a = Adam::new(1, 1e-4, 0.9, 0.999, 1e-8);
            let mut p = vec![0.5];
            a.update(&mut p, &[g]).unwrap();
            assert!(((0.5 - p[0]) - 1e-4 * g.signum()).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_is_skipped() {
        let mut a = Adam::new(2, 1e-4, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, 1.0];
        assert_eq!(a.update(&mut p, &[0.1, f64::NAN]), Err(OptimError::NonFinite(1)));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(a.step, 0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
