//! Sliding bidirectional LSTM symbol detector.
//!
//! A stack of bidirectional LSTM layers reads `W` consecutive received
//! columns and emits a PMF for each of the `W` symbols it covers. The window
//! slides one symbol at a time over the block and every symbol's final PMF is
//! the plain average of the PMFs of all windows covering it. Symbol `k` is
//! therefore final once column `k + W - 1` has been received.
//!
//! Forward and backward directions are concatenated per time step, both as
//! input to the next layer and as input to the output head. A BPSK model uses
//! a single sigmoid output `q = P(index 0)` that is expanded to the PMF
//! `[q, 1 - q]`; QPSK uses a four-way softmax.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{bail, Result};
use crate::modem::{Dataset, DatasetRole, Modulation, RxBlock, SymbolBlock};
use crate::nn::{
    sigmoid_cross_entropy, softmax, softmax_cross_entropy, Activation, AdamState, DenseHead, LayerNorm, Lstm, LstmCache,
    LstmState, Parameters,
};
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SbrnnConfig {
    pub num_antennas: usize,
    pub hidden_size: usize,
    pub window: usize,
    pub num_layers: usize,
    pub modulation: Modulation,
    /// Normalize each bidirectional layer's output per time step.
    pub layer_norm: bool,
}

impl Default for SbrnnConfig {
    fn default() -> Self {
        Self { num_antennas: 4, hidden_size: 20, window: 30, num_layers: 3, modulation: Modulation::Bpsk, layer_norm: false }
    }
}

impl SbrnnConfig {
    pub fn input_size(&self) -> usize {
        2 * self.num_antennas
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_antennas == 0 || self.hidden_size == 0 || self.window == 0 || self.num_layers == 0 {
            bail!(Config, "model sizes must be positive: {self:?}");
        }
        Ok(())
    }

    fn head_shape(&self) -> (usize, Activation) {
        match self.modulation {
            Modulation::Bpsk => (1, Activation::Sigmoid),
            Modulation::Qpsk => (self.modulation.alphabet_size(), Activation::Softmax),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLayer {
    pub forward: Lstm,
    pub backward: Lstm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbrnnModel {
    config: SbrnnConfig,
    layers: Vec<BiLayer>,
    head: DenseHead,
}

/// Real features of a received block: column `i` is `[Re y_i ; Im y_i]`,
/// stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub dim: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn column(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn window(&self, start: usize, width: usize) -> &[f64] {
        &self.data[start * self.dim..(start + width) * self.dim]
    }
}

/// Features of the first `L` columns; the convolution tail is not used.
pub fn featurize(rx: &RxBlock) -> Features {
    let nr = rx.num_antennas;
    let len = rx.block_len.min(rx.num_columns());
    let mut data = Vec::with_capacity(len * 2 * nr);
    for i in 0..len {
        let col = rx.column(i);
        data.extend(col.iter().map(|y| y.re));
        data.extend(col.iter().map(|y| y.im));
    }
    Features { dim: 2 * nr, len, data }
}

/// Inverse of [`featurize`], time-major complex samples.
pub fn defeaturize(features: &Features) -> Vec<Complex64> {
    let nr = features.dim / 2;
    (0..features.len)
        .flat_map(|i| {
            let col = features.column(i);
            (0..nr).map(move |n| Complex64::new(col[n], col[nr + n]))
        })
        .collect()
}

/// Per-symbol PMFs, `len x alphabet` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfSequence {
    pub alphabet: usize,
    pub probs: Vec<f64>,
}

impl PmfSequence {
    pub fn len(&self) -> usize {
        self.probs.len() / self.alphabet
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn pmf(&self, k: usize) -> &[f64] {
        &self.probs[k * self.alphabet..(k + 1) * self.alphabet]
    }
}

/// Argmax per symbol, ties to the lowest index.
pub fn hard_decide(pmfs: &PmfSequence, modulation: Modulation) -> SymbolBlock {
    let indices = (0..pmfs.len()).map(|k| argmax(pmfs.pmf(k)) as u8).collect();
    SymbolBlock { indices, modulation }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Forward activations of one bidirectional layer over one window.
struct LayerTrace {
    fwd: LstmCache,
    bwd: LstmCache,
    /// `steps x 2H` layer output (after normalization when enabled).
    out: Vec<f64>,
    /// `1 / sqrt(var + eps)` per step when normalization is enabled.
    inv_std: Vec<f64>,
}

struct WindowTrace {
    steps: usize,
    layers: Vec<LayerTrace>,
    /// `steps x head outputs`
    logits: Vec<f64>,
}

fn reverse_rows(data: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(width).rev() {
        out.extend_from_slice(row);
    }
    out
}

impl SbrnnModel {
    pub fn zeros(config: SbrnnConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let layers = (0..config.num_layers)
            .map(|l| {
                let input = if l == 0 { config.input_size() } else { 2 * h };
                BiLayer { forward: Lstm::zeros(input, h), backward: Lstm::zeros(input, h) }
            })
            .collect();
        let (outputs, activation) = config.head_shape();
        let head = DenseHead::zeros(2 * h, outputs, activation)?;
        Ok(Self { config, layers, head })
    }

    /// Random initialization: LSTM weights uniform in `+-1/sqrt(H)`, forget
    /// biases `+1`.
    pub fn init<R: Rng + ?Sized>(config: SbrnnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let layers = (0..config.num_layers)
            .map(|l| {
                let input = if l == 0 { config.input_size() } else { 2 * h };
                let forward = Lstm::init(input, h, rng);
                let backward = Lstm::init(input, h, rng);
                BiLayer { forward, backward }
            })
            .collect();
        let (outputs, activation) = config.head_shape();
        let head = DenseHead::init(2 * h, outputs, activation, rng)?;
        Ok(Self { config, layers, head })
    }

    pub fn config(&self) -> &SbrnnConfig {
        &self.config
    }

    pub fn layers(&self) -> &[BiLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [BiLayer] {
        &mut self.layers
    }

    pub fn head(&self) -> &DenseHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut DenseHead {
        &mut self.head
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| BiLayer { forward: l.forward.zeros_like(), backward: l.backward.zeros_like() })
                .collect(),
            head: self.head.zeros_like(),
        }
    }

    fn alphabet(&self) -> usize {
        self.config.modulation.alphabet_size()
    }

    fn check_window(&self, window: &[f64]) -> Result<usize> {
        let dim = self.config.input_size();
        if window.is_empty() || window.len() % dim != 0 {
            bail!(Domain, "window of {} values does not hold columns of {dim} features", window.len());
        }
        Ok(window.len() / dim)
    }

    /// Runs the stack. `first` optionally carries precomputed first-layer
    /// projections `(forward rows, backward rows in reversed order)`; when
    /// `grad` is false the caches keep no inputs.
    fn run(&self, window: &[f64], first: Option<(&[f64], &[f64])>, grad: bool) -> Result<WindowTrace> {
        let steps = self.check_window(window)?;
        let h = self.config.hidden_size;
        let ln = LayerNorm::default();
        let mut layers: Vec<LayerTrace> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input: &[f64] = if l == 0 { window } else { &layers[l - 1].out };
            let in_dim = layer.forward.input_size();
            let input_rev = reverse_rows(input, in_dim);
            let zero = LstmState::zeros(h);
            let (fwd, bwd) = match (l, first) {
                (0, Some((pf, pb))) => {
                    let keep = |x: &[f64]| if grad { x.to_vec() } else { Vec::new() };
                    (
                        layer.forward.forward_projected(pf, &keep(input), &zero)?.1,
                        layer.backward.forward_projected(pb, &keep(&input_rev), &zero)?.1,
                    )
                }
                _ => (layer.forward.forward(input, &zero)?.1, layer.backward.forward(&input_rev, &zero)?.1),
            };
            let hf = fwd.outputs();
            let hb = bwd.outputs();
            let mut out = Vec::with_capacity(steps * 2 * h);
            let mut inv_std = Vec::new();
            for t in 0..steps {
                let start = out.len();
                out.extend_from_slice(&hf[t * h..(t + 1) * h]);
                let tb = steps - 1 - t;
                out.extend_from_slice(&hb[tb * h..(tb + 1) * h]);
                if self.config.layer_norm {
                    let (y, inv) = ln.forward(&out[start..]);
                    out[start..].copy_from_slice(&y);
                    inv_std.push(inv);
                }
            }
            layers.push(LayerTrace { fwd, bwd, out, inv_std });
        }
        let top = &layers.last().expect("at least one layer").out;
        let mut logits = Vec::with_capacity(steps * self.head.outputs());
        for t in 0..steps {
            logits.extend(self.head.logits(&top[t * 2 * h..(t + 1) * 2 * h])?);
        }
        Ok(WindowTrace { steps, layers, logits })
    }

    fn logits_to_pmf(&self, z: &[f64]) -> Vec<f64> {
        match self.head.activation() {
            Activation::Sigmoid => {
                let q = crate::math::sigmoid(z[0]);
                alloc::vec![q, 1.0 - q]
            }
            Activation::Softmax => softmax(z),
        }
    }

    fn trace_pmfs(&self, trace: &WindowTrace) -> Vec<Vec<f64>> {
        let k = self.head.outputs();
        (0..trace.steps).map(|t| self.logits_to_pmf(&trace.logits[t * k..(t + 1) * k])).collect()
    }

    /// PMFs for every position of one window (`steps x 2Nr` features).
    pub fn window_forward(&self, window: &[f64]) -> Result<Vec<Vec<f64>>> {
        let trace = self.run(window, None, false)?;
        Ok(self.trace_pmfs(&trace))
    }

    /// Summed cross-entropy over the window positions.
    pub fn window_loss(&self, window: &[f64], labels: &[u8]) -> Result<f64> {
        let trace = self.run(window, None, false)?;
        if labels.len() != trace.steps {
            bail!(Domain, "{} labels for a window of {}", labels.len(), trace.steps);
        }
        let k = self.head.outputs();
        Ok(labels
            .iter()
            .enumerate()
            .map(|(t, &y)| self.position_loss(&trace.logits[t * k..(t + 1) * k], y).0)
            .sum())
    }

    fn position_loss(&self, z: &[f64], label: u8) -> (f64, Vec<f64>) {
        match self.head.activation() {
            Activation::Sigmoid => {
                let (l, dz) = sigmoid_cross_entropy(z[0], label as usize);
                (l, alloc::vec![dz])
            }
            Activation::Softmax => softmax_cross_entropy(z, label as usize),
        }
    }

    /// Summed cross-entropy over the window and its gradient, scaled by
    /// `scale` and accumulated into `grads`.
    pub fn window_loss_grad(&self, window: &[f64], labels: &[u8], scale: f64, grads: &mut SbrnnModel) -> Result<f64> {
        let trace = self.run(window, None, true)?;
        let steps = trace.steps;
        if labels.len() != steps {
            bail!(Domain, "{} labels for a window of {}", labels.len(), steps);
        }
        if grads.config != self.config {
            bail!(Domain, "gradient buffer belongs to a different architecture");
        }
        let h = self.config.hidden_size;
        let k = self.head.outputs();
        let ln = LayerNorm::default();

        let mut total = 0.0;
        let top = &trace.layers.last().expect("at least one layer").out;
        let mut d_out = Vec::with_capacity(steps * 2 * h);
        for t in 0..steps {
            let (loss, mut dz) = self.position_loss(&trace.logits[t * k..(t + 1) * k], labels[t]);
            total += loss;
            dz.iter_mut().for_each(|g| *g *= scale);
            d_out.extend(self.head.backward_logits(&top[t * 2 * h..(t + 1) * 2 * h], &dz, &mut grads.head)?);
        }

        for (l, layer) in self.layers.iter().enumerate().rev() {
            let tr = &trace.layers[l];
            if self.config.layer_norm {
                for t in 0..steps {
                    let span = t * 2 * h..(t + 1) * 2 * h;
                    let dx = ln.backward(&tr.out[span.clone()], tr.inv_std[t], &d_out[span.clone()]);
                    d_out[span].copy_from_slice(&dx);
                }
            }
            let mut dhf = Vec::with_capacity(steps * h);
            let mut dhb_rev = alloc::vec![0.0; steps * h];
            for t in 0..steps {
                dhf.extend_from_slice(&d_out[t * 2 * h..t * 2 * h + h]);
                let tb = steps - 1 - t;
                dhb_rev[tb * h..(tb + 1) * h].copy_from_slice(&d_out[t * 2 * h + h..(t + 1) * 2 * h]);
            }
            let g = &mut grads.layers[l];
            let (dx_f, _) = layer.forward.backward(&tr.fwd, &dhf, &mut g.forward)?;
            let (dx_b_rev, _) = layer.backward.backward(&tr.bwd, &dhb_rev, &mut g.backward)?;
            if l > 0 {
                let in_dim = layer.forward.input_size();
                let mut d_in = dx_f;
                for t in 0..steps {
                    let tb = steps - 1 - t;
                    for (a, b) in d_in[t * in_dim..(t + 1) * in_dim]
                        .iter_mut()
                        .zip(&dx_b_rev[tb * in_dim..(tb + 1) * in_dim])
                    {
                        *a += b;
                    }
                }
                d_out = d_in;
            }
        }
        Ok(total)
    }

    /// Sliding detection over the first `L` columns of `rx`.
    pub fn detect(&self, rx: &RxBlock) -> Result<PmfSequence> {
        if rx.num_antennas != self.config.num_antennas {
            bail!(Domain, "block has {} antennas, model expects {}", rx.num_antennas, self.config.num_antennas);
        }
        self.detect_features(&featurize(rx))
    }

    pub fn detect_features(&self, features: &Features) -> Result<PmfSequence> {
        let len = features.len;
        if len == 0 {
            bail!(Domain, "cannot detect an empty block");
        }
        if features.dim != self.config.input_size() {
            bail!(Domain, "features have {} rows, model expects {}", features.dim, self.config.input_size());
        }
        let width = self.config.window.min(len);
        let gates = 4 * self.config.hidden_size;
        let first = &self.layers[0];
        let proj_f = first.forward.project_inputs(&features.data)?;
        let proj_b = first.backward.project_inputs(&features.data)?;

        let m = self.alphabet();
        let mut sums = alloc::vec![0.0; len * m];
        let mut counts = alloc::vec![0usize; len];
        for j in 0..=len - width {
            let pf = &proj_f[j * gates..(j + width) * gates];
            let pb = reverse_rows(&proj_b[j * gates..(j + width) * gates], gates);
            let trace = self.run(features.window(j, width), Some((pf, &pb)), false)?;
            for (t, p) in self.trace_pmfs(&trace).iter().enumerate() {
                let k = j + t;
                for (s, v) in sums[k * m..(k + 1) * m].iter_mut().zip(p) {
                    *s += v;
                }
                counts[k] += 1;
            }
        }
        for (k, &c) in counts.iter().enumerate() {
            sums[k * m..(k + 1) * m].iter_mut().for_each(|s| *s /= c as f64);
        }
        Ok(PmfSequence { alphabet: m, probs: sums })
    }

    /// Detects and counts symbol errors over every block of `dataset`.
    pub fn symbol_errors(&self, dataset: &Dataset) -> Result<(usize, usize)> {
        let mut errors = 0;
        let mut total = 0;
        for s in &dataset.samples {
            let decided = hard_decide(&self.detect(&s.rx)?, self.config.modulation);
            errors += decided.symbol_errors(&s.symbols);
            total += s.symbols.len();
        }
        Ok((errors, total))
    }
}

impl Parameters for SbrnnModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            v.extend(l.forward.param_slices());
            v.extend(l.backward.param_slices());
        }
        v.extend(self.head.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            v.extend(l.forward.param_slices_mut());
            v.extend(l.backward.param_slices_mut());
        }
        v.extend(self.head.param_slices_mut());
        v
    }
}

/// Incremental detection: columns are pushed as they arrive and each
/// symbol's PMF is released as soon as no later window can cover it.
pub struct StreamingDetector<'a> {
    model: &'a SbrnnModel,
    features: Vec<f64>,
    columns: usize,
    sums: Vec<f64>,
    counts: Vec<usize>,
    released: usize,
}

impl<'a> StreamingDetector<'a> {
    pub fn new(model: &'a SbrnnModel) -> Self {
        Self { model, features: Vec::new(), columns: 0, sums: Vec::new(), counts: Vec::new(), released: 0 }
    }

    fn accumulate(&mut self, start: usize, width: usize) -> Result<()> {
        let dim = self.model.config.input_size();
        let m = self.model.alphabet();
        let pmfs = self.model.window_forward(&self.features[start * dim..(start + width) * dim])?;
        for (t, p) in pmfs.iter().enumerate() {
            let k = start + t;
            for (s, v) in self.sums[k * m..(k + 1) * m].iter_mut().zip(p) {
                *s += v;
            }
            self.counts[k] += 1;
        }
        Ok(())
    }

    fn release(&mut self, upto: usize) -> Vec<(usize, Vec<f64>)> {
        let m = self.model.alphabet();
        let out = (self.released..upto)
            .map(|k| {
                let c = self.counts[k] as f64;
                (k, self.sums[k * m..(k + 1) * m].iter().map(|s| s / c).collect())
            })
            .collect();
        self.released = upto.max(self.released);
        out
    }

    /// Feeds one received column; returns the PMFs that became final.
    pub fn push(&mut self, column: &[Complex64]) -> Result<Vec<(usize, Vec<f64>)>> {
        if column.len() != self.model.config.num_antennas {
            bail!(Domain, "column has {} antennas", column.len());
        }
        self.features.extend(column.iter().map(|y| y.re));
        self.features.extend(column.iter().map(|y| y.im));
        self.columns += 1;
        self.sums.extend(core::iter::repeat_n(0.0, self.model.alphabet()));
        self.counts.push(0);
        let w = self.model.config.window;
        if self.columns >= w {
            let start = self.columns - w;
            self.accumulate(start, w)?;
            return Ok(self.release(start + 1));
        }
        Ok(Vec::new())
    }

    /// Ends the block and releases the remaining symbols.
    pub fn finish(mut self) -> Result<Vec<(usize, Vec<f64>)>> {
        if self.columns == 0 {
            bail!(Domain, "cannot detect an empty block");
        }
        if self.columns < self.model.config.window {
            self.accumulate(0, self.columns)?;
        }
        let n = self.columns;
        Ok(self.release(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    /// Random windows drawn from each training block per pass.
    pub windows_per_block: usize,
    pub learning_rate: f64,
    /// Fraction of blocks held out for validation accuracy.
    pub val_fraction: f64,
    /// Evaluate validation accuracy every this many consumed blocks.
    pub eval_interval: Option<usize>,
    pub accuracy_threshold: Option<f64>,
    /// Return as soon as the threshold is reached.
    pub stop_at_threshold: bool,
    pub max_samples: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            windows_per_block: 1,
            learning_rate: 1e-3,
            val_fraction: 0.1,
            eval_interval: None,
            accuracy_threshold: None,
            stop_at_threshold: false,
            max_samples: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-symbol cross-entropy over the epoch's windows.
    pub mean_loss: f64,
    pub val_accuracy: Option<f64>,
    pub samples_seen: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// `(samples consumed, validation accuracy)` at every evaluation point.
    pub evaluations: Vec<(usize, f64)>,
    pub samples_to_threshold: Option<usize>,
    pub samples_seen: usize,
}

/// Held-out blocks with one fixed window each.
struct Validation<'d> {
    windows: Vec<(&'d [f64], &'d [u8])>,
}

impl Validation<'_> {
    fn accuracy(&self, model: &SbrnnModel) -> Result<Option<f64>> {
        if self.windows.is_empty() {
            return Ok(None);
        }
        let mut correct = 0usize;
        let mut total = 0usize;
        for (w, labels) in &self.windows {
            let pmfs = model.window_forward(w)?;
            correct += pmfs.iter().zip(labels.iter()).filter(|(p, &y)| argmax(p) == y as usize).count();
            total += labels.len();
        }
        Ok(Some(correct as f64 / total as f64))
    }
}

/// Trains `model` on `dataset`.
///
/// The last `val_fraction` of blocks is held out. Each pass over the
/// remaining blocks visits them in a seeded random order and draws
/// `windows_per_block` windows with uniformly random starts from each; the
/// loss is the mean cross-entropy over every position of every window in a
/// batch.
pub fn train(mut model: SbrnnModel, dataset: &Dataset, config: &TrainConfig) -> Result<(SbrnnModel, TrainReport)> {
    if dataset.role != DatasetRole::Train {
        bail!(Domain, "dataset {:#x} is an evaluation set and cannot be trained on", dataset.id);
    }
    if dataset.is_empty() {
        bail!(Domain, "training set is empty");
    }
    if dataset.modulation != model.config.modulation {
        bail!(Domain, "dataset modulation differs from the model's");
    }
    if config.batch_size == 0 || config.windows_per_block == 0 {
        bail!(Config, "batch size and windows per block must be positive");
    }
    if !(0.0..1.0).contains(&config.val_fraction) {
        bail!(Config, "validation fraction must lie in [0, 1)");
    }

    let features: Vec<Features> = dataset.samples.iter().map(|s| featurize(&s.rx)).collect();
    if features.iter().any(|f| f.dim != model.config.input_size()) {
        bail!(Domain, "dataset antenna count differs from the model's");
    }
    let n = dataset.len();
    let n_val = if n < 2 { 0 } else { (libm::round(config.val_fraction * n as f64) as usize).clamp(1, n - 1) };
    let n_val = if config.val_fraction == 0.0 { 0 } else { n_val };
    let n_train = n - n_val;

    let w = model.config.window;
    let validation = Validation {
        windows: (n_train..n)
            .map(|b| {
                let f = &features[b];
                let width = w.min(f.len);
                let starts = (f.len - width + 1) as u64;
                let start = (seed::derive(config.seed, &[stream::BLOCK, b as u64]) % starts) as usize;
                (f.window(start, width), &dataset.samples[b].symbols.indices[start..start + width])
            })
            .collect(),
    };

    let mut rng = seed::rng(seed::derive(config.seed, &[stream::TRAINING]));
    let mut adam = AdamState::new(model.num_params(), config.learning_rate);
    let mut grads = model.zeros_like();
    let mut report = TrainReport::default();
    let mut batch: Vec<(usize, usize)> = Vec::with_capacity(config.batch_size);
    let mut epoch_loss = 0.0;
    let mut epoch_positions = 0usize;

    let evaluate = |model: &SbrnnModel, report: &mut TrainReport| -> Result<bool> {
        let Some(acc) = validation.accuracy(model)? else { return Ok(false) };
        report.evaluations.push((report.samples_seen, acc));
        if let Some(th) = config.accuracy_threshold {
            if report.samples_to_threshold.is_none() && acc >= th {
                report.samples_to_threshold = Some(report.samples_seen);
                return Ok(config.stop_at_threshold);
            }
        }
        Ok(false)
    };

    let mut step = |model: &mut SbrnnModel, batch: &mut Vec<(usize, usize)>, loss: &mut f64, positions: &mut usize| -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        grads.fill_zero();
        let count: usize = batch.iter().map(|&(b, _)| w.min(features[b].len)).sum();
        let scale = 1.0 / count as f64;
        let mut batch_loss = 0.0;
        for &(b, start) in batch.iter() {
            let width = w.min(features[b].len);
            let labels = &dataset.samples[b].symbols.indices[start..start + width];
            batch_loss += model.window_loss_grad(features[b].window(start, width), labels, scale, &mut grads)?;
        }
        if !batch_loss.is_finite() {
            bail!(Training, "non-finite loss {batch_loss} after {} optimizer steps", adam.step);
        }
        adam.update(model, &grads)?;
        *loss += batch_loss;
        *positions += count;
        batch.clear();
        Ok(())
    };

    if config.eval_interval.is_some() && evaluate(&model, &mut report)? {
        return Ok((model, report));
    }

    let mut order: Vec<usize> = (0..n_train).collect();
    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &b in &order {
            if config.max_samples.is_some_and(|m| report.samples_seen >= m) {
                break 'epochs;
            }
            let len = features[b].len;
            let width = w.min(len);
            for _ in 0..config.windows_per_block {
                batch.push((b, rng.random_range(0..=len - width)));
            }
            report.samples_seen += 1;
            if batch.len() >= config.batch_size {
                step(&mut model, &mut batch, &mut epoch_loss, &mut epoch_positions)?;
            }
            if let Some(every) = config.eval_interval {
                if report.samples_seen % every == 0 {
                    step(&mut model, &mut batch, &mut epoch_loss, &mut epoch_positions)?;
                    if evaluate(&model, &mut report)? {
                        break 'epochs;
                    }
                }
            }
        }
        step(&mut model, &mut batch, &mut epoch_loss, &mut epoch_positions)?;
        report.history.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / epoch_positions.max(1) as f64,
            val_accuracy: validation.accuracy(&model)?,
            samples_seen: report.samples_seen,
        });
        epoch_loss = 0.0;
        epoch_positions = 0;
    }
    step(&mut model, &mut batch, &mut epoch_loss, &mut epoch_positions)?;
    Ok((model, report))
}

/// Warm-started training. Identical to [`train`] except that it starts
/// from `pretrained`, which must match the dataset's antenna count and
/// modulation.
pub fn fine_tune(pretrained: &SbrnnModel, dataset: &Dataset, config: &TrainConfig) -> Result<(SbrnnModel, TrainReport)> {
    let nr = dataset.samples.first().map(|s| s.rx.num_antennas).unwrap_or(pretrained.config.num_antennas);
    if nr != pretrained.config.num_antennas || dataset.modulation != pretrained.config.modulation {
        bail!(
            Checkpoint,
            "pretrained model expects {} antennas / {:?}, dataset has {nr} / {:?}",
            pretrained.config.num_antennas,
            pretrained.config.modulation,
            dataset.modulation
        );
    }
    train(pretrained.clone(), dataset, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelRealization;
    use crate::modem::{generate_dataset, LinkConfig, SnrMode};
    use crate::nn::{finite_diff_check, sample_coords, GradCheckConfig};
    use alloc::vec;

    fn tiny(nr: usize, h: usize, w: usize, modulation: Modulation, layer_norm: bool) -> SbrnnConfig {
        SbrnnConfig { num_antennas: nr, hidden_size: h, window: w, num_layers: 3, modulation, layer_norm }
    }

    fn random_rx(nr: usize, len: usize, extra: usize, rng: &mut seed::SimRng) -> RxBlock {
        let samples = (0..(len + extra) * nr)
            .map(|_| Complex64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
            .collect();
        RxBlock { samples, num_antennas: nr, block_len: len, noise_variance: 0.0, channel_id: 0 }
    }

    #[test]
    fn zero_model_is_uniform() {
        for m in [Modulation::Bpsk, Modulation::Qpsk] {
            let model = SbrnnModel::zeros(tiny(2, 3, 4, m, false)).unwrap();
            let rx = random_rx(2, 4, 0, &mut seed::rng(1));
            let pmfs = model.window_forward(&featurize(&rx).data).unwrap();
            let u = 1.0 / m.alphabet_size() as f64;
            assert!(pmfs.iter().all(|p| p.iter().all(|&v| (v - u).abs() < 1e-15)));
        }
    }

    #[test]
    fn featurize_layout_and_inverse() {
        let rx = RxBlock {
            samples: vec![Complex64::new(1.0, 2.0)],
            num_antennas: 1,
            block_len: 1,
            noise_variance: 0.0,
            channel_id: 0,
        };
        assert_eq!(featurize(&rx).data, vec![1.0, 2.0]);
        let zero = RxBlock { samples: vec![Complex64::new(0.0, 0.0); 6], num_antennas: 2, block_len: 3, ..rx.clone() };
        assert!(featurize(&zero).data.iter().all(|&v| v == 0.0));

        let rx = random_rx(3, 7, 4, &mut seed::rng(2));
        let f = featurize(&rx);
        assert_eq!(f.len, 7);
        assert_eq!(defeaturize(&f), rx.samples[..21].to_vec());
    }

    #[test]
    fn single_step_window_uses_initial_states() {
        let model = SbrnnModel::init(tiny(2, 3, 1, Modulation::Qpsk, false), &mut seed::rng(3)).unwrap();
        let x = [0.3, -0.2, 0.8, 0.1];
        let pmf = &model.window_forward(&x).unwrap()[0];
        // one step from zero state in each direction, no recurrence
        let mut input = x.to_vec();
        for layer in model.layers() {
            let (hf, _) = layer.forward.forward(&input, &LstmState::zeros(3)).unwrap();
            let (hb, _) = layer.backward.forward(&input, &LstmState::zeros(3)).unwrap();
            input = hf.h.iter().chain(&hb.h).copied().collect();
        }
        let expected = model.head().forward(&input).unwrap();
        for (a, b) in pmf.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    /// Straight-loop re-implementation of the bidirectional stack, written
    /// against the per-gate weight accessors only.
    fn oracle_window(model: &SbrnnModel, window: &[f64]) -> Vec<Vec<f64>> {
        let cfg = model.config();
        let h = cfg.hidden_size;
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let run = |lstm: &Lstm, xs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let i_sz = lstm.input_size();
            let w = |gate: usize, unit: usize, col: usize| lstm.weights[col * 4 * h + gate * h + unit];
            let b = |gate: usize, unit: usize| lstm.bias[gate * h + unit];
            let mut hs = vec![0.0; h];
            let mut cs = vec![0.0; h];
            let mut out = Vec::new();
            for x in xs {
                let mut nh = vec![0.0; h];
                let mut nc = vec![0.0; h];
                for u in 0..h {
                    let pre = |gate: usize| {
                        let mut a = b(gate, u);
                        for c in 0..i_sz {
                            a += w(gate, u, c) * x[c];
                        }
                        for c in 0..h {
                            a += w(gate, u, i_sz + c) * hs[c];
                        }
                        a
                    };
                    let (i, f, g, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
                    nc[u] = f * cs[u] + i * g;
                    nh[u] = o * nc[u].tanh();
                }
                hs = nh;
                cs = nc;
                out.push(hs.clone());
            }
            out
        };
        let dim = cfg.input_size();
        let mut seq: Vec<Vec<f64>> = window.chunks(dim).map(|c| c.to_vec()).collect();
        for layer in model.layers() {
            let f = run(&layer.forward, &seq);
            let rev: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
            let mut b = run(&layer.backward, &rev);
            b.reverse();
            seq = f.iter().zip(&b).map(|(x, y)| x.iter().chain(y).copied().collect()).collect();
        }
        let head = model.head();
        seq.iter()
            .map(|x| {
                let z: Vec<f64> = (0..head.outputs())
                    .map(|o| head.bias[o] + (0..x.len()).map(|r| head.weights[r * head.outputs() + o] * x[r]).sum::<f64>())
                    .collect();
                match head.activation() {
                    Activation::Sigmoid => vec![sig(z[0]), 1.0 - sig(z[0])],
                    Activation::Softmax => {
                        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
                        let s: f64 = e.iter().sum();
                        e.iter().map(|v| v / s).collect()
                    }
                }
            })
            .collect()
    }

    #[test]
    fn window_forward_matches_straight_loop_oracle() {
        for (s, m) in [(0u64, Modulation::Bpsk), (1, Modulation::Qpsk), (2, Modulation::Bpsk)] {
            let mut rng = seed::rng(10 + s);
            let model = SbrnnModel::init(tiny(3, 5, 7, m, false), &mut rng).unwrap();
            let rx = random_rx(3, 7, 0, &mut rng);
            let window = featurize(&rx).data;
            let got = model.window_forward(&window).unwrap();
            let want = oracle_window(&model, &window);
            for (a, b) in got.iter().zip(&want) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn window_shape_errors() {
        let model = SbrnnModel::zeros(tiny(2, 3, 4, Modulation::Bpsk, false)).unwrap();
        assert!(model.window_forward(&[0.0; 5]).is_err());
        assert!(model.window_forward(&[]).is_err());
        let rx = random_rx(3, 4, 0, &mut seed::rng(0));
        assert!(model.detect(&rx).is_err());
    }

    /// Every window, explicit covering sets.
    fn brute_force_detect(model: &SbrnnModel, f: &Features) -> Vec<Vec<f64>> {
        let w = model.config().window.min(f.len);
        let starts: Vec<usize> = (0..=f.len - w).collect();
        let outputs: Vec<Vec<Vec<f64>>> = starts.iter().map(|&j| model.window_forward(f.window(j, w)).unwrap()).collect();
        (0..f.len)
            .map(|k| {
                let cover: Vec<usize> = starts.iter().copied().filter(|&j| j <= k && k < j + w).collect();
                let mut p = vec![0.0; model.config().modulation.alphabet_size()];
                for &j in &cover {
                    for (a, b) in p.iter_mut().zip(&outputs[j][k - j]) {
                        *a += b;
                    }
                }
                p.iter().map(|v| v / cover.len() as f64).collect()
            })
            .collect()
    }

    #[test]
    fn detect_matches_brute_force_and_streaming() {
        let mut rng = seed::rng(21);
        let model = SbrnnModel::init(tiny(2, 4, 5, Modulation::Qpsk, false), &mut rng).unwrap();
        for len in [1usize, 3, 5, 6, 17] {
            let rx = random_rx(2, len, 3, &mut rng);
            let pmfs = model.detect(&rx).unwrap();
            let want = brute_force_detect(&model, &featurize(&rx));
            for k in 0..len {
                for (a, b) in pmfs.pmf(k).iter().zip(&want[k]) {
                    assert!((a - b).abs() < 1e-12);
                }
                assert!((pmfs.pmf(k).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }

            let mut streaming = StreamingDetector::new(&model);
            let mut got = Vec::new();
            for i in 0..len {
                let released = streaming.push(rx.column(i)).unwrap();
                // symbol k is final once column k + W - 1 has arrived
                for (k, _) in &released {
                    assert_eq!(i, k + 4);
                }
                got.extend(released);
            }
            got.extend(streaming.finish().unwrap());
            assert_eq!(got.len(), len);
            for (k, p) in got {
                assert_eq!(p.as_slice(), pmfs.pmf(k));
            }
        }
    }

    #[test]
    fn covering_set_sizes() {
        // hand bookkeeping for L = 3, W = 2 and the closed form for |J_k|
        let model = SbrnnModel::init(tiny(1, 2, 2, Modulation::Bpsk, false), &mut seed::rng(4)).unwrap();
        let rx = random_rx(1, 3, 0, &mut seed::rng(5));
        let f = featurize(&rx);
        let w0 = model.window_forward(f.window(0, 2)).unwrap();
        let w1 = model.window_forward(f.window(1, 2)).unwrap();
        let p = model.detect(&rx).unwrap();
        assert!((p.pmf(0)[0] - w0[0][0]).abs() < 1e-15);
        assert!((p.pmf(1)[0] - (w0[1][0] + w1[0][0]) / 2.0).abs() < 1e-15);
        assert!((p.pmf(2)[0] - w1[1][0]).abs() < 1e-15);

        for (len, w) in [(10usize, 3usize), (7, 7), (20, 6)] {
            for k in 1..=len {
                let brute = (1..=len - w + 1).filter(|&j| j <= k && k <= j + w - 1).count();
                assert_eq!(brute, k.min(w).min(len - w + 1).min(len - k + 1));
            }
        }
    }

    #[test]
    fn tail_columns_are_ignored() {
        let model = SbrnnModel::init(tiny(2, 3, 4, Modulation::Bpsk, false), &mut seed::rng(6)).unwrap();
        let mut rx = random_rx(2, 9, 5, &mut seed::rng(7));
        let a = model.detect(&rx).unwrap();
        for y in &mut rx.samples[18..] {
            *y = Complex64::new(100.0, -100.0);
        }
        assert_eq!(a, model.detect(&rx).unwrap());
    }

    #[test]
    fn hard_decisions() {
        let p = PmfSequence { alphabet: 2, probs: vec![0.8, 0.2, 0.5, 0.5, 0.1, 0.9] };
        assert_eq!(hard_decide(&p, Modulation::Bpsk).indices, vec![0, 0, 1]);
        let mut rng = seed::rng(8);
        for _ in 0..100 {
            let probs: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let p = PmfSequence { alphabet: 4, probs: probs.clone() };
            let mut best = 0;
            for i in 1..4 {
                if probs[i] > probs[best] {
                    best = i;
                }
            }
            assert_eq!(hard_decide(&p, Modulation::Qpsk).indices, vec![best as u8]);
        }
    }

    #[test]
    fn full_stack_gradients() {
        for (s, (m, ln)) in
            [(Modulation::Bpsk, false), (Modulation::Qpsk, false), (Modulation::Bpsk, true)].iter().enumerate()
        {
            let mut rng = seed::rng(50 + s as u64);
            let model = SbrnnModel::init(tiny(2, 3, 5, *m, *ln), &mut rng).unwrap();
            let rx = random_rx(2, 5, 0, &mut rng);
            let window = featurize(&rx).data;
            let labels: Vec<u8> = (0..5).map(|_| rng.random_range(0..m.alphabet_size() as u8)).collect();
            let mut grads = model.zeros_like();
            let loss = model.window_loss_grad(&window, &labels, 1.0, &mut grads).unwrap();
            assert!((loss - model.window_loss(&window, &labels).unwrap()).abs() < 1e-12);

            let params = model.to_flat();
            let coords = sample_coords(params.len(), 200, &mut rng);
            let f = |p: &[f64]| {
                let mut m2 = model.clone();
                m2.load_flat(p).unwrap();
                m2.window_loss(&window, &labels).unwrap()
            };
            let report = finite_diff_check(f, &params, &grads.to_flat(), &coords, &GradCheckConfig::default());
            assert!(report.passed, "{m:?} ln={ln}: {report:?}");
        }
    }

    fn identity_dataset(blocks: usize, seed_v: u64, role: DatasetRole) -> (ChannelRealization, Dataset) {
        let ch = ChannelRealization::from_taps(vec![Complex64::new(1.0, 0.0)], 1, 1, 1.0).unwrap();
        let link = LinkConfig { snr: SnrMode::Fixed(300.0), block_length: 40, seed: seed_v, ..Default::default() };
        let ds = generate_dataset(&ch, &link, Modulation::Bpsk, blocks, role).unwrap();
        (ch, ds)
    }

    #[test]
    fn learns_noiseless_identity_channel() {
        let (_, ds) = identity_dataset(200, 1, DatasetRole::Train);
        let config = SbrnnConfig { num_antennas: 1, window: 10, hidden_size: 8, ..Default::default() };
        let model = SbrnnModel::init(config, &mut seed::rng(2)).unwrap();
        let tc = TrainConfig { epochs: 15, windows_per_block: 2, batch_size: 16, learning_rate: 1e-2, ..Default::default() };
        let (model, report) = train(model, &ds, &tc).unwrap();
        let acc = report.history.last().unwrap().val_accuracy.unwrap();
        assert!(acc >= 0.99, "validation accuracy {acc}");
        let (_, eval) = identity_dataset(20, 9, DatasetRole::Eval);
        let (errors, _) = model.symbol_errors(&eval).unwrap();
        assert_eq!(errors, 0);
    }

    #[test]
    fn zero_learning_rate_and_determinism() {
        let (_, ds) = identity_dataset(20, 3, DatasetRole::Train);
        let config = SbrnnConfig { num_antennas: 1, window: 6, hidden_size: 4, ..Default::default() };
        let model = SbrnnModel::init(config, &mut seed::rng(2)).unwrap();
        let frozen = TrainConfig { epochs: 3, learning_rate: 0.0, batch_size: 4, ..Default::default() };
        let (after, _) = train(model.clone(), &ds, &frozen).unwrap();
        assert_eq!(after.to_flat(), model.to_flat());

        let tc = TrainConfig { epochs: 2, batch_size: 4, seed: 5, ..Default::default() };
        let (a, ra) = train(model.clone(), &ds, &tc).unwrap();
        let (b, rb) = train(model.clone(), &ds, &tc).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        assert_eq!(ra, rb);
    }

    #[test]
    fn refuses_evaluation_data() {
        let (_, ds) = identity_dataset(5, 3, DatasetRole::Eval);
        let config = SbrnnConfig { num_antennas: 1, window: 6, hidden_size: 4, ..Default::default() };
        let model = SbrnnModel::init(config, &mut seed::rng(2)).unwrap();
        assert!(train(model, &ds, &TrainConfig::default()).is_err());
    }

    #[test]
    fn fine_tune_threshold_bookkeeping() {
        let (_, ds) = identity_dataset(60, 4, DatasetRole::Train);
        let config = SbrnnConfig { num_antennas: 1, window: 6, hidden_size: 4, ..Default::default() };
        let model = SbrnnModel::init(config.clone(), &mut seed::rng(2)).unwrap();
        let tc = TrainConfig {
            epochs: 1,
            eval_interval: Some(10),
            accuracy_threshold: Some(0.0),
            stop_at_threshold: true,
            ..Default::default()
        };
        let (_, report) = fine_tune(&model, &ds, &tc).unwrap();
        assert_eq!(report.samples_to_threshold, Some(0));

        let other = SbrnnModel::init(SbrnnConfig { num_antennas: 2, ..config }, &mut seed::rng(2)).unwrap();
        assert!(matches!(fine_tune(&other, &ds, &tc), Err(crate::Error::Checkpoint(_))));
    }
}
