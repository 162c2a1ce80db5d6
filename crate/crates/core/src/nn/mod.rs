//! A small neural-network substrate: LSTM cells with exact backpropagation
//! through time, dense output heads, losses, Adam and a finite-difference
//! gradient checker. Everything is `f64`.

mod adam;
mod dense;
mod gradcheck;
mod layer_norm;
mod loss;
mod lstm;

pub use adam::AdamState;
pub use dense::{Activation, DenseHead};
pub use gradcheck::{finite_diff_check, sample_coords, GradCheckConfig, GradCheckReport};
pub use layer_norm::LayerNorm;
pub use loss::{cross_entropy, cross_entropy_backward, sigmoid_cross_entropy, softmax, softmax_cross_entropy};
pub use lstm::{Lstm, LstmCache, LstmState, GATE_CELL, GATE_FORGET, GATE_INPUT, GATE_OUTPUT};

use alloc::vec::Vec;

/// Anything that owns trainable parameters in a fixed order.
///
/// The order of the slices defines the flat parameter layout used by the
/// optimizer, gradient checks and checkpoints. A gradient buffer is a value
/// of the same type with identical shapes.
pub trait Parameters {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    /// Overwrites all parameters; `flat` must have `num_params()` entries.
    fn load_flat(&mut self, flat: &[f64]) -> crate::Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(crate::Error::Checkpoint(alloc::format!("expected {n} parameters, got {}", flat.len())));
        }
        let mut off = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }

    fn fill_zero(&mut self) {
        for s in self.param_slices_mut() {
            s.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

impl Parameters for Vec<f64> {
    fn param_slices(&self) -> Vec<&[f64]> {
        alloc::vec![self.as_slice()]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        alloc::vec![self.as_mut_slice()]
    }
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y += sum_r x[r] * w[r * y.len()..][..y.len()]`, i.e. `y += x^T W` for a
/// row-major `W`. Output blocks stay in registers across the reduction.
pub(crate) fn gemv_acc(y: &mut [f64], x: &[f64], w: &[f64]) {
    let g = y.len();
    debug_assert!(w.len() >= x.len() * g);
    let mut col = 0;
    while col + 40 <= g {
        gemv_block::<40>(y, x, w, col);
        col += 40;
    }
    while col + 8 <= g {
        gemv_block::<8>(y, x, w, col);
        col += 8;
    }
    for j in col..g {
        y[j] += x.iter().enumerate().map(|(r, xr)| xr * w[r * g + j]).sum::<f64>();
    }
}

/// Even and odd rows go to separate accumulators to shorten the FMA
/// dependency chains.
#[inline(always)]
fn gemv_block<const B: usize>(y: &mut [f64], x: &[f64], w: &[f64], col: usize) {
    let g = y.len();
    let mut even = [0.0; B];
    let mut odd = [0.0; B];
    even.copy_from_slice(&y[col..col + B]);
    let pairs = x.len() / 2;
    for p in 0..pairs {
        let (x0, x1) = (x[2 * p], x[2 * p + 1]);
        let r0 = &w[2 * p * g + col..2 * p * g + col + B];
        let r1 = &w[(2 * p + 1) * g + col..(2 * p + 1) * g + col + B];
        for j in 0..B {
            even[j] += x0 * r0[j];
            odd[j] += x1 * r1[j];
        }
    }
    if x.len() % 2 == 1 {
        let r = x.len() - 1;
        let row = &w[r * g + col..r * g + col + B];
        for j in 0..B {
            even[j] += x[r] * row[j];
        }
    }
    for j in 0..B {
        y[col + j] = even[j] + odd[j];
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (xa, xb) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}
