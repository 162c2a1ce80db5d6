use alloc::vec::Vec;

use super::Parameters;
use crate::error::{bail, Result};
use crate::math::{pow, sqrt};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: alloc::vec![0.0; num_params],
            v: alloc::vec![0.0; num_params],
        }
    }

    pub fn num_params(&self) -> usize {
        self.m.len()
    }

    /// Applies one update to `params` using `grads` of identical layout.
    pub fn update<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g_slices = grads.param_slices();
        let mut p_slices = params.param_slices_mut();
        let total: usize = p_slices.iter().map(|s| s.len()).sum();
        if total != self.m.len() || g_slices.iter().map(|s| s.len()).sum::<usize>() != total {
            bail!(Domain, "optimizer state holds {} entries, parameters {total}", self.m.len());
        }
        self.step += 1;
        let bc1 = 1.0 - pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - pow(self.beta2, self.step as f64);
        let mut off = 0;
        for (p, g) in p_slices.iter_mut().zip(&g_slices) {
            if p.len() != g.len() {
                bail!(Domain, "parameter and gradient slices differ in length");
            }
            let m = &mut self.m[off..off + p.len()];
            let v = &mut self.v[off..off + p.len()];
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= self.lr * m_hat / (sqrt(v_hat) + self.eps);
            }
            off += p.len();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = alloc::vec![0.5, -1.0, 2.0];
        let g = alloc::vec![0.0; 3];
        let mut adam = AdamState::new(3, 1e-3);
        for _ in 0..5 {
            adam.update(&mut p, &g).unwrap();
        }
        assert_eq!(p, alloc::vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = alloc::vec![1.0];
        let mut adam = AdamState::new(1, 1e-3);
        adam.update(&mut p, &alloc::vec![1.0]).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((1.0 - p[0] - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let run = || {
            let mut p = alloc::vec![0.1, 0.2];
            let mut adam = AdamState::new(2, 0.01);
            for k in 0..10 {
                adam.update(&mut p, &alloc::vec![k as f64 * 0.1, -0.3]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
        let mut adam = AdamState::new(3, 0.01);
        assert!(adam.update(&mut alloc::vec![0.0; 2], &alloc::vec![0.0; 2]).is_err());
    }
}
