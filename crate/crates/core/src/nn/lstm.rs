use alloc::vec::Vec;

use rand::Rng;

use super::{axpy, dot, gemv_acc, Parameters};
use crate::error::{bail, Result};
use crate::math::{sigmoid_slice, tanh_slice};

/// Gate blocks inside each row of the weight matrix.
pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CELL: usize = 2;
pub const GATE_OUTPUT: usize = 3;

/// A single-direction LSTM layer.
///
/// Weights are stored input-major: row `r` of the `(I + H) x 4H` matrix holds
/// the contribution of input `r` (or of hidden unit `r - I`) to all four gate
/// pre-activations, laid out `[input | forget | cell | output]` with `H`
/// entries each. The per-gate `H x (I + H)` matrix is therefore the transpose
/// of one column block.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    input_size: usize,
    hidden_size: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: alloc::vec![0.0; hidden], c: alloc::vec![0.0; hidden] }
    }
}

/// Activations recorded by [`Lstm::forward`] for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmCache {
    input_size: usize,
    hidden_size: usize,
    steps: usize,
    /// `steps x I`
    inputs: Vec<f64>,
    /// `steps x 4H`, post-activation `[i f g o]`
    gates: Vec<f64>,
    /// `(steps + 1) x H`, row 0 is the initial state
    cells: Vec<f64>,
    hiddens: Vec<f64>,
    /// `steps x H`, `tanh(c_t)`
    tanh_c: Vec<f64>,
}

impl LstmCache {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Hidden outputs `h_1..h_steps`, `steps x H`.
    pub fn outputs(&self) -> &[f64] {
        &self.hiddens[self.hidden_size..]
    }
}

impl Lstm {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            weights: alloc::vec![0.0; (input_size + hidden_size) * 4 * hidden_size],
            bias: alloc::vec![0.0; 4 * hidden_size],
        }
    }

    /// Uniform `+-1/sqrt(H)` weights, zero biases except `+1` on the forget gate.
    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut lstm = Self::zeros(input_size, hidden_size);
        let bound = 1.0 / crate::math::sqrt(hidden_size as f64);
        for w in &mut lstm.weights {
            *w = rng.random_range(-bound..bound);
        }
        lstm.bias[GATE_FORGET * hidden_size..(GATE_FORGET + 1) * hidden_size]
            .iter_mut()
            .for_each(|b| *b = 1.0);
        lstm
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size, self.hidden_size)
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    fn gate_width(&self) -> usize {
        4 * self.hidden_size
    }

    /// Mutable access to the weight connecting column `col` of `[x; h]` to
    /// unit `unit` of `gate`.
    pub fn weight_mut(&mut self, gate: usize, unit: usize, col: usize) -> &mut f64 {
        let g = self.gate_width();
        &mut self.weights[col * g + gate * self.hidden_size + unit]
    }

    pub fn bias_mut(&mut self, gate: usize, unit: usize) -> &mut f64 {
        &mut self.bias[gate * self.hidden_size + unit]
    }

    /// Input contribution plus bias to the gate pre-activations, `steps x 4H`.
    /// The result depends only on the inputs, so callers that run many
    /// overlapping windows over the same sequence can compute it once.
    pub fn project_inputs(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let i_sz = self.input_size;
        if i_sz == 0 || inputs.len() % i_sz != 0 {
            bail!(Domain, "input length {} is not a multiple of input size {i_sz}", inputs.len());
        }
        let g = self.gate_width();
        let steps = inputs.len() / i_sz;
        let mut proj = Vec::with_capacity(steps * g);
        for x in inputs.chunks_exact(i_sz) {
            let start = proj.len();
            proj.extend_from_slice(&self.bias);
            gemv_acc(&mut proj[start..], x, &self.weights);
        }
        Ok(proj)
    }

    /// Runs the recurrence over `inputs` (`steps x I`, time-major) from
    /// `init`. Returns the final state and a cache holding all hidden outputs.
    pub fn forward(&self, inputs: &[f64], init: &LstmState) -> Result<(LstmState, LstmCache)> {
        let proj = self.project_inputs(inputs)?;
        self.forward_projected(&proj, inputs, init)
    }

    /// Same as [`Lstm::forward`] with precomputed input projections. `inputs`
    /// is only stored for the backward pass and may be empty when no
    /// gradient is needed.
    pub fn forward_projected(&self, proj: &[f64], inputs: &[f64], init: &LstmState) -> Result<(LstmState, LstmCache)> {
        let h_sz = self.hidden_size;
        let g = self.gate_width();
        if proj.len() % g != 0 {
            bail!(Domain, "projection length {} is not a multiple of {g}", proj.len());
        }
        if init.h.len() != h_sz || init.c.len() != h_sz {
            bail!(Domain, "initial state size does not match hidden size {h_sz}");
        }
        let steps = proj.len() / g;
        if !inputs.is_empty() && inputs.len() != steps * self.input_size {
            bail!(Domain, "cached inputs do not match {steps} steps");
        }

        let mut cache = LstmCache {
            input_size: self.input_size,
            hidden_size: h_sz,
            steps,
            inputs: inputs.to_vec(),
            gates: alloc::vec![0.0; steps * g],
            cells: alloc::vec![0.0; (steps + 1) * h_sz],
            hiddens: alloc::vec![0.0; (steps + 1) * h_sz],
            tanh_c: alloc::vec![0.0; steps * h_sz],
        };
        cache.cells[..h_sz].copy_from_slice(&init.c);
        cache.hiddens[..h_sz].copy_from_slice(&init.h);

        let recurrent = &self.weights[self.input_size * g..];
        for t in 0..steps {
            let (hist_h, next_h) = cache.hiddens.split_at_mut((t + 1) * h_sz);
            let h_prev = &hist_h[t * h_sz..];
            let a = &mut cache.gates[t * g..(t + 1) * g];
            a.copy_from_slice(&proj[t * g..(t + 1) * g]);
            gemv_acc(a, h_prev, recurrent);
            let (ai, rest) = a.split_at_mut(h_sz);
            let (af, rest) = rest.split_at_mut(h_sz);
            let (ag, ao) = rest.split_at_mut(h_sz);
            let (hist_c, next_c) = cache.cells.split_at_mut((t + 1) * h_sz);
            let c_prev = &hist_c[t * h_sz..];
            let c = &mut next_c[..h_sz];
            let h = &mut next_h[..h_sz];
            let tc = &mut cache.tanh_c[t * h_sz..(t + 1) * h_sz];
            sigmoid_slice(ai);
            sigmoid_slice(af);
            tanh_slice(ag);
            sigmoid_slice(ao);
            for k in 0..h_sz {
                c[k] = af[k] * c_prev[k] + ai[k] * ag[k];
            }
            tc.copy_from_slice(c);
            tanh_slice(tc);
            for k in 0..h_sz {
                h[k] = ao[k] * tc[k];
            }
        }
        let last = steps * h_sz;
        let final_state = LstmState {
            h: cache.hiddens[last..last + h_sz].to_vec(),
            c: cache.cells[last..last + h_sz].to_vec(),
        };
        Ok((final_state, cache))
    }

    /// Backpropagation through time.
    ///
    /// `d_outputs` is the gradient of the loss with respect to every hidden
    /// output (`steps x H`). Parameter gradients are accumulated into `grads`;
    /// the input gradients (`steps x I`) and the gradient with respect to the
    /// initial state are returned.
    pub fn backward(&self, cache: &LstmCache, d_outputs: &[f64], grads: &mut Lstm) -> Result<(Vec<f64>, LstmState)> {
        let h_sz = self.hidden_size;
        let i_sz = self.input_size;
        let g = self.gate_width();
        if cache.hidden_size != h_sz || cache.input_size != i_sz {
            bail!(Domain, "cache was produced by a layer of different shape");
        }
        if cache.inputs.len() != cache.steps * i_sz {
            bail!(Domain, "cache holds no inputs; forward was run without gradient support");
        }
        if d_outputs.len() != cache.steps * h_sz {
            bail!(Domain, "upstream gradient has {} entries, expected {}", d_outputs.len(), cache.steps * h_sz);
        }
        if grads.input_size != i_sz || grads.hidden_size != h_sz {
            bail!(Domain, "gradient buffer shape mismatch");
        }

        let mut d_inputs = alloc::vec![0.0; cache.steps * i_sz];
        let mut dh_next = alloc::vec![0.0; h_sz];
        let mut dc_next = alloc::vec![0.0; h_sz];
        let mut da = alloc::vec![0.0; g];
        for t in (0..cache.steps).rev() {
            let gates = &cache.gates[t * g..(t + 1) * g];
            let c_prev = &cache.cells[t * h_sz..(t + 1) * h_sz];
            let tc = &cache.tanh_c[t * h_sz..(t + 1) * h_sz];
            for k in 0..h_sz {
                let (i, f, gg, o) = (gates[k], gates[h_sz + k], gates[2 * h_sz + k], gates[3 * h_sz + k]);
                let dh = d_outputs[t * h_sz + k] + dh_next[k];
                let d_o = dh * tc[k];
                let dc = dh * o * (1.0 - tc[k] * tc[k]) + dc_next[k];
                da[k] = dc * gg * i * (1.0 - i);
                da[h_sz + k] = dc * c_prev[k] * f * (1.0 - f);
                da[2 * h_sz + k] = dc * i * (1.0 - gg * gg);
                da[3 * h_sz + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            axpy(1.0, &da, &mut grads.bias);
            let x = &cache.inputs[t * i_sz..(t + 1) * i_sz];
            let h_prev = &cache.hiddens[t * h_sz..(t + 1) * h_sz];
            for (r, &z) in x.iter().chain(h_prev).enumerate() {
                if z != 0.0 {
                    axpy(z, &da, &mut grads.weights[r * g..(r + 1) * g]);
                }
            }
            for r in 0..i_sz {
                d_inputs[t * i_sz + r] = dot(&self.weights[r * g..(r + 1) * g], &da);
            }
            for r in 0..h_sz {
                let row = i_sz + r;
                dh_next[r] = dot(&self.weights[row * g..(row + 1) * g], &da);
            }
        }
        Ok((d_inputs, LstmState { h: dh_next, c: dc_next }))
    }
}

impl Parameters for Lstm {
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
    use alloc::vec;

    fn random_inputs(n: usize, rng: &mut seed::SimRng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let lstm = Lstm::zeros(3, 4);
        let mut rng = seed::rng(0);
        let x = random_inputs(15, &mut rng);
        let (state, cache) = lstm.forward(&x, &LstmState::zeros(4)).unwrap();
        assert!(cache.outputs().iter().all(|&h| h == 0.0));
        assert!(state.h.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn empty_sequence_keeps_state() {
        let lstm = Lstm::init(2, 3, &mut seed::rng(1));
        let init = LstmState { h: vec![0.1, -0.2, 0.3], c: vec![1.0, 2.0, 3.0] };
        let (state, cache) = lstm.forward(&[], &init).unwrap();
        assert_eq!(state, init);
        assert!(cache.outputs().is_empty());
    }

    #[test]
    fn hand_computed_single_step() {
        let mut lstm = Lstm::zeros(1, 1);
        // gate pre-activations for x = 0.5, h0 = 0.2
        let weights = [(0.3, -0.1, 0.05), (0.7, 0.4, 1.0), (-0.6, 0.2, 0.0), (1.1, 0.3, -0.2)];
        for (gate, &(wx, wh, b)) in weights.iter().enumerate() {
            *lstm.weight_mut(gate, 0, 0) = wx;
            *lstm.weight_mut(gate, 0, 1) = wh;
            *lstm.bias_mut(gate, 0) = b;
        }
        let init = LstmState { h: vec![0.2], c: vec![-0.4] };
        let (state, _) = lstm.forward(&[0.5], &init).unwrap();

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = sig(0.3 * 0.5 - 0.1 * 0.2 + 0.05);
        let f = sig(0.7 * 0.5 + 0.4 * 0.2 + 1.0);
        let g = (-0.6f64 * 0.5 + 0.2 * 0.2).tanh();
        let o = sig(1.1 * 0.5 + 0.3 * 0.2 - 0.2);
        let c = f * -0.4 + i * g;
        let h = o * c.tanh();
        assert!((state.c[0] - c).abs() < 1e-12);
        assert!((state.h[0] - h).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gradient() {
        let lstm = Lstm::init(2, 3, &mut seed::rng(2));
        let x = random_inputs(8, &mut seed::rng(3));
        let (_, cache) = lstm.forward(&x, &LstmState::zeros(3)).unwrap();
        let mut grads = lstm.zeros_like();
        let (dx, _) = lstm.backward(&cache, &vec![0.0; 12], &mut grads).unwrap();
        assert!(grads.to_flat().iter().all(|&g| g == 0.0));
        assert!(dx.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mismatched_cache_rejected() {
        let a = Lstm::init(2, 3, &mut seed::rng(2));
        let b = Lstm::init(3, 3, &mut seed::rng(2));
        let (_, cache) = a.forward(&[0.1, 0.2], &LstmState::zeros(3)).unwrap();
        let mut grads = b.zeros_like();
        assert!(b.backward(&cache, &[0.0; 3], &mut grads).is_err());
        assert!(a.forward(&[0.1, 0.2, 0.3], &LstmState::zeros(3)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for s in 0..20u64 {
            let mut rng = seed::rng(100 + s);
            let lstm = Lstm::init(2, 3, &mut rng);
            let x = random_inputs(8, &mut rng);
            let proj = random_inputs(12, &mut rng);
            let init = LstmState { h: random_inputs(3, &mut rng), c: random_inputs(3, &mut rng) };
            // loss = sum_t <proj_t, h_t>
            let loss_of = |m: &Lstm, xs: &[f64], st: &LstmState| {
                let (_, cache) = m.forward(xs, st).unwrap();
                cache.outputs().iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>()
            };

            let (_, cache) = lstm.forward(&x, &init).unwrap();
            let mut grads = lstm.zeros_like();
            let (dx, d_init) = lstm.backward(&cache, &proj, &mut grads).unwrap();

            let config = GradCheckConfig::default();
            let params = lstm.to_flat();
            let coords: Vec<usize> = (0..params.len()).collect();
            let by_params = |p: &[f64]| {
                let mut m = lstm.clone();
                m.load_flat(p).unwrap();
                loss_of(&m, &x, &init)
            };
            let report = finite_diff_check(by_params, &params, &grads.to_flat(), &coords, &config);
            assert!(report.passed, "seed {s}: {report:?}");

            let coords: Vec<usize> = (0..x.len()).collect();
            let report = finite_diff_check(|xp: &[f64]| loss_of(&lstm, xp, &init), &x, &dx, &coords, &config);
            assert!(report.passed, "seed {s} inputs: {report:?}");

            let flat_init: Vec<f64> = init.h.iter().chain(&init.c).copied().collect();
            let d_flat: Vec<f64> = d_init.h.iter().chain(&d_init.c).copied().collect();
            let by_state = |p: &[f64]| loss_of(&lstm, &x, &LstmState { h: p[..3].to_vec(), c: p[3..].to_vec() });
            let report = finite_diff_check(by_state, &flat_init, &d_flat, &[0, 1, 2, 3, 4, 5], &config);
            assert!(report.passed, "seed {s} state: {report:?}");
        }
    }

    #[test]
    fn single_weight_central_difference() {
        let mut rng = seed::rng(77);
        let lstm = Lstm::init(2, 3, &mut rng);
        let x = random_inputs(8, &mut rng);
        let (_, cache) = lstm.forward(&x, &LstmState::zeros(3)).unwrap();
        let mut grads = lstm.zeros_like();
        lstm.backward(&cache, &vec![1.0; 12], &mut grads).unwrap();

        let summed = |m: &Lstm| m.forward(&x, &LstmState::zeros(3)).unwrap().1.outputs().iter().sum::<f64>();
        let h = 1e-5;
        let idx = 7;
        let mut plus = lstm.clone();
        plus.weights[idx] += h;
        let mut minus = lstm.clone();
        minus.weights[idx] -= h;
        let numeric = (summed(&plus) - summed(&minus)) / (2.0 * h);
        assert!((numeric - grads.weights[idx]).abs() < 1e-8 * (1.0 + numeric.abs()));
    }
}
