use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Scales `grads` in place so that their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// First and second moment estimates over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One Adam update of `params` (given as consecutive slices whose total
    /// length matches the state) from the flat gradient `grads`. Gradients
    /// are clipped to global norm `clip` first.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &mut [f64],
        learning_rate: f64,
        clip: f64,
        config: &AdamConfig,
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                actual: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                epoch: 0,
                step: self.t as usize,
            });
        }
        clip_global_norm(grads, clip);
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        let mut k = 0;
        for slice in params.iter_mut() {
            for p in slice.iter_mut() {
                let g = grads[k];
                let m = config.beta1 * self.m[k] + (1.0 - config.beta1) * g;
                let v = config.beta2 * self.v[k] + (1.0 - config.beta2) * g * g;
                self.m[k] = m;
                self.v[k] = v;
                *p -= learning_rate * (m / c1) / ((v / c2).sqrt() + config.epsilon);
                k += 1;
            }
        }
        if k != grads.len() {
            return Err(Error::DimensionMismatch {
                expected: grads.len(),
                actual: k,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_halves_norm_eight() {
        let mut g = vec![0.0, 8.0];
        let before = clip_global_norm(&mut g, 4.0);
        assert_eq!(before, 8.0);
        assert_eq!(g, vec![0.0, 4.0]);
        let mut small = vec![1.0, 1.0];
        clip_global_norm(&mut small, 4.0);
        assert_eq!(small, vec![1.0, 1.0]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.5, -2.0];
        let mut s = AdamState::new(2);
        s.m = vec![0.4, -0.2];
        s.v = vec![0.01, 0.02];
        let mut g = vec![0.0, 0.0];
        // nonzero moments still move the parameters; zero moments must not
        let mut fresh = AdamState::new(2);
        fresh
            .step(&mut [p.as_mut_slice()], &mut g, 0.1, 4.0, &AdamConfig::default())
            .unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        s.step(&mut [p.as_mut_slice()], &mut g, 0.1, 4.0, &AdamConfig::default())
            .unwrap();
        assert!((s.m[0] - 0.36).abs() < 1e-15);
        assert!((s.v[1] - 0.02 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn quadratic_converges() {
        // loss (p - 1)^2 from p = 0; Adam steps are about lr in size
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        for _ in 0..500 {
            let mut g = vec![2.0 * (p[0] - 1.0)];
            s.step(&mut [p.as_mut_slice()], &mut g, 1e-2, 4.0, &AdamConfig::default())
                .unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3, "p = {}", p[0]);
    }

    #[test]
    fn nan_gradient_is_an_error() {
        let mut p = vec![0.0];
        let mut g = vec![f64::NAN];
        let r = AdamState::new(1).step(&mut [p.as_mut_slice()], &mut g, 1e-3, 4.0, &AdamConfig::default());
        assert!(matches!(r, Err(Error::NonFiniteGradient { .. })));
    }
}
