use alloc::vec::Vec;

use crate::math::sqrt;

/// Parameter-free layer normalization, `(x - mean) / sqrt(var + eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub eps: f64,
}

impl Default for LayerNorm {
    fn default() -> Self {
        Self { eps: 1e-5 }
    }
}

impl LayerNorm {
    /// Returns the normalized vector and `1 / sqrt(var + eps)`.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / sqrt(var + self.eps);
        (x.iter().map(|v| (v - mean) * inv).collect(), inv)
    }

    /// Input gradient given the normalized output `y` and `inv` from
    /// [`LayerNorm::forward`].
    pub fn backward(&self, y: &[f64], inv: f64, dy: &[f64]) -> Vec<f64> {
        let n = y.len() as f64;
        let mean_dy = dy.iter().sum::<f64>() / n;
        let mean_dy_y = dy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
        dy.iter().zip(y).map(|(g, yv)| inv * (g - mean_dy - yv * mean_dy_y)).collect()
    }
}
