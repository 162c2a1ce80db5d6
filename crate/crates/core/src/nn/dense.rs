use alloc::vec::Vec;

use rand::Rng;

use super::{axpy, dot, softmax, Parameters};
use crate::error::{bail, Result};
use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Activation {
    /// `M` outputs forming a PMF.
    Softmax,
    /// One output in `(0, 1)`.
    Sigmoid,
}

/// Affine layer followed by softmax or sigmoid. Weights are input-major,
/// `input_size x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    input_size: usize,
    outputs: usize,
    activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseHead {
    pub fn zeros(input_size: usize, outputs: usize, activation: Activation) -> Result<Self> {
        if outputs == 0 || input_size == 0 {
            bail!(Domain, "dense head needs non-zero sizes");
        }
        if activation == Activation::Sigmoid && outputs != 1 {
            bail!(Domain, "a sigmoid head has exactly one output, got {outputs}");
        }
        Ok(Self {
            input_size,
            outputs,
            activation,
            weights: alloc::vec![0.0; input_size * outputs],
            bias: alloc::vec![0.0; outputs],
        })
    }

    pub fn init<R: Rng + ?Sized>(input_size: usize, outputs: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        let mut head = Self::zeros(input_size, outputs, activation)?;
        let bound = 1.0 / crate::math::sqrt(input_size as f64);
        head.weights.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        Ok(head)
    }

    pub fn zeros_like(&self) -> Self {
        Self { weights: alloc::vec![0.0; self.weights.len()], bias: alloc::vec![0.0; self.bias.len()], ..*self }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size {
            bail!(Domain, "dense input has {} entries, expected {}", x.len(), self.input_size);
        }
        let mut z = self.bias.clone();
        for (r, &xr) in x.iter().enumerate() {
            axpy(xr, &self.weights[r * self.outputs..(r + 1) * self.outputs], &mut z);
        }
        Ok(z)
    }

    /// Softmax PMF, or `[q]` with `q = sigmoid(z)` for a sigmoid head.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.logits(x)?;
        Ok(match self.activation {
            Activation::Softmax => softmax(&z),
            Activation::Sigmoid => alloc::vec![sigmoid(z[0])],
        })
    }

    /// Accumulates parameter gradients for an upstream gradient on the
    /// logits and returns the input gradient.
    pub fn backward_logits(&self, x: &[f64], d_logits: &[f64], grads: &mut DenseHead) -> Result<Vec<f64>> {
        if x.len() != self.input_size || d_logits.len() != self.outputs {
            bail!(Domain, "dense backward shape mismatch");
        }
        axpy(1.0, d_logits, &mut grads.bias);
        for (r, &xr) in x.iter().enumerate() {
            axpy(xr, d_logits, &mut grads.weights[r * self.outputs..(r + 1) * self.outputs]);
        }
        Ok((0..self.input_size)
            .map(|r| dot(&self.weights[r * self.outputs..(r + 1) * self.outputs], d_logits))
            .collect())
    }

    /// Backward pass for an upstream gradient on the activated outputs
    /// returned by [`DenseHead::forward`].
    pub fn backward(&self, x: &[f64], outputs: &[f64], d_outputs: &[f64], grads: &mut DenseHead) -> Result<Vec<f64>> {
        if outputs.len() != self.outputs || d_outputs.len() != self.outputs {
            bail!(Domain, "dense backward shape mismatch");
        }
        let d_logits: Vec<f64> = match self.activation {
            Activation::Softmax => {
                let inner = dot(outputs, d_outputs);
                outputs.iter().zip(d_outputs).map(|(p, g)| p * (g - inner)).collect()
            }
            Activation::Sigmoid => alloc::vec![d_outputs[0] * outputs[0] * (1.0 - outputs[0])],
        };
        self.backward_logits(x, &d_logits, grads)
    }
}

impl Parameters for DenseHead {
    fn param_slices(&self) -> Vec<&[f64]> {
        alloc::vec![&self.weights[..], &self.bias[..]]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        alloc::vec![&mut self.weights[..], &mut self.bias[..]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, GradCheckConfig};
    use crate::seed;

    #[test]
    fn zero_heads_are_uniform() {
        let head = DenseHead::zeros(4, 2, Activation::Softmax).unwrap();
        assert_eq!(head.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), alloc::vec![0.5, 0.5]);
        let head = DenseHead::zeros(4, 1, Activation::Sigmoid).unwrap();
        assert_eq!(head.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), alloc::vec![0.5]);
        assert!(DenseHead::zeros(4, 2, Activation::Sigmoid).is_err());
        assert!(head.forward(&[1.0]).is_err());
    }

    #[test]
    fn softmax_head_is_a_pmf() {
        let mut rng = seed::rng(3);
        let head = DenseHead::init(6, 4, Activation::Softmax, &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-50.0..50.0)).collect();
        let p = head.forward(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (activation, outputs) in [(Activation::Softmax, 4), (Activation::Sigmoid, 1)] {
            for s in 0..20 {
                let mut rng = seed::rng(40 + s);
                let head = DenseHead::init(5, outputs, activation, &mut rng).unwrap();
                let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                let w: Vec<f64> = (0..outputs).map(|_| rng.random_range(-1.0..1.0)).collect();
                let loss = |h: &DenseHead, x: &[f64]| h.forward(x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();

                let out = head.forward(&x).unwrap();
                let mut grads = head.zeros_like();
                let dx = head.backward(&x, &out, &w, &mut grads).unwrap();

                let params = head.to_flat();
                let coords: Vec<usize> = (0..params.len()).collect();
                let by_params = |p: &[f64]| {
                    let mut h = head.clone();
                    h.load_flat(p).unwrap();
                    loss(&h, &x)
                };
                let config = GradCheckConfig::default();
                assert!(finite_diff_check(by_params, &params, &grads.to_flat(), &coords, &config).passed);
                let coords: Vec<usize> = (0..5).collect();
                assert!(finite_diff_check(|xp: &[f64]| loss(&head, xp), &x, &dx, &coords, &config).passed);
            }
        }
    }
}
