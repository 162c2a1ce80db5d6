//! Model-based sequence detectors given channel state information.
//!
//! All detectors minimize the Gaussian sequence metric
//! `sum_i |y_i - sum_l H[l] x[i-l]|^2` with `x` zero outside the block.
//! `FullBlock` sums over all `L + T - 1` received columns, `Cut` over the
//! first `L` only. The beam search prunes per time step: every survivor is
//! extended by all `M` symbols and the `X` best children are kept, ties going
//! to the lexicographically smaller prefix.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::error::{bail, Result};
use crate::modem::{Modulation, RxBlock, SymbolBlock};

/// Largest `M^L` accepted by [`exact_ml_detect`].
pub const MAX_ML_SEQUENCES: u64 = 1 << 20;

/// Channel knowledge handed to a detector; may differ from the channel that
/// produced the block.
#[derive(Debug, Clone, Copy)]
pub struct CsiView<'a> {
    pub channel: &'a ChannelRealization,
    pub noise_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BeamMode {
    FullBlock,
    Cut,
}

/// A decoded sequence and its metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub symbols: SymbolBlock,
    pub metric: f64,
}

/// A live beam-search hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub prefix: Vec<u8>,
    pub metric: f64,
    /// Last `min(len, T - 1)` symbols, most recent first.
    pub recent: Vec<u8>,
}

/// `|y - sum_l H[l] x[i-l]|^2` for one column, `past[j]` being the symbol
/// under tap `j`.
pub fn branch_metric(y_col: &[Complex64], past: &[u8], modulation: Modulation, channel: &ChannelRealization) -> f64 {
    let nr = channel.num_antennas();
    let mut r = y_col.to_vec();
    for (l, &s) in past.iter().enumerate().take(channel.memory()) {
        let x = modulation.point(s);
        for (rn, h) in r.iter_mut().zip(channel.tap(l)) {
            *rn -= h * x;
        }
    }
    r[..nr].iter().map(|v| v.norm_sqr()).sum()
}

/// `H[l] * point(m)` for every tap and symbol.
struct TapTable {
    nr: usize,
    memory: usize,
    m: usize,
    table: Vec<Complex64>,
}

impl TapTable {
    fn new(channel: &ChannelRealization, modulation: Modulation) -> Self {
        let nr = channel.num_antennas();
        let m = modulation.alphabet_size();
        let mut table = Vec::with_capacity(channel.memory() * m * nr);
        for l in 0..channel.memory() {
            for s in 0..m {
                let x = modulation.point(s as u8);
                table.extend(channel.tap(l).iter().map(|h| h * x));
            }
        }
        Self { nr, memory: channel.memory(), m, table }
    }

    fn contrib(&self, tap: usize, sym: u8) -> &[Complex64] {
        let at = (tap * self.m + sym as usize) * self.nr;
        &self.table[at..at + self.nr]
    }

    /// `out = y - sum_j H[first + j] x_j`.
    fn residual(&self, y: &[Complex64], first: usize, symbols: &[u8], out: &mut [Complex64]) {
        out.copy_from_slice(y);
        for (j, &s) in symbols.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.contrib(first + j, s)) {
                *o -= c;
            }
        }
    }

    fn metric(&self, r: &[Complex64], sym: u8) -> f64 {
        r.iter().zip(self.contrib(0, sym)).map(|(a, b)| (a - b).norm_sqr()).sum()
    }

    /// Metric of the tail columns given the last symbols, most recent first.
    fn tail(&self, rx: &RxBlock, recent: &[u8], scratch: &mut [Complex64]) -> f64 {
        let mut total = 0.0;
        for t in 0..self.memory.saturating_sub(1) {
            let take = recent.len().min(self.memory - 1 - t);
            self.residual(rx.column(rx.block_len + t), t + 1, &recent[..take], scratch);
            total += scratch.iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        total
    }
}

fn check_shapes(rx: &RxBlock, csi: &CsiView<'_>, mode: BeamMode) -> Result<()> {
    let ch = csi.channel;
    if rx.num_antennas != ch.num_antennas() {
        bail!(Domain, "block has {} antennas, CSI has {}", rx.num_antennas, ch.num_antennas());
    }
    if rx.block_len == 0 {
        bail!(Domain, "cannot detect an empty block");
    }
    let needed = match mode {
        BeamMode::FullBlock => rx.block_len + ch.memory() - 1,
        BeamMode::Cut => rx.block_len,
    };
    if rx.num_columns() < needed {
        bail!(Domain, "block has {} columns, {needed} needed", rx.num_columns());
    }
    Ok(())
}

/// Exhaustive maximum-likelihood detection over all `M^L` sequences,
/// including the tail columns. Ties go to the lexicographically smallest
/// sequence.
pub fn exact_ml_detect(rx: &RxBlock, csi: &CsiView<'_>, modulation: Modulation) -> Result<Decision> {
    check_shapes(rx, csi, BeamMode::FullBlock)?;
    let len = rx.block_len;
    let m = modulation.alphabet_size();
    let count = (m as u64).checked_pow(len as u32).filter(|&c| c <= MAX_ML_SEQUENCES);
    if count.is_none() {
        bail!(Capacity, "{m}^{len} sequences exceed the enumeration limit of {MAX_ML_SEQUENCES}");
    }
    let table = TapTable::new(csi.channel, modulation);
    let hist = table.memory - 1;

    // rev[len - 1 - k] = s_k so the symbols under taps 1.. of column k are a
    // contiguous slice starting at len - k.
    let mut rev = vec![0u8; len];
    let mut metrics = vec![0.0; len + 1];
    let mut next = vec![0u8; len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); table.nr];
    let mut residuals = vec![Complex64::new(0.0, 0.0); len * table.nr];
    let mut best = f64::INFINITY;
    let mut best_seq = vec![0u8; len];

    let mut k = 0usize;
    loop {
        if next[k] == 0 {
            let past = &rev[len - k..len - k + k.min(hist)];
            table.residual(rx.column(k), 1, past, &mut residuals[k * table.nr..(k + 1) * table.nr]);
        }
        if next[k] as usize == m {
            next[k] = 0;
            if k == 0 {
                break;
            }
            k -= 1;
            continue;
        }
        let s = next[k];
        next[k] += 1;
        rev[len - 1 - k] = s;
        metrics[k + 1] = metrics[k] + table.metric(&residuals[k * table.nr..(k + 1) * table.nr], s);
        if k + 1 < len {
            k += 1;
            continue;
        }
        let total = metrics[len] + table.tail(rx, &rev[..len.min(hist)], &mut scratch);
        if total < best {
            best = total;
            for (j, b) in best_seq.iter_mut().enumerate() {
                *b = rev[len - 1 - j];
            }
        }
    }
    Ok(Decision { symbols: SymbolBlock { indices: best_seq, modulation }, metric: best })
}

#[derive(Clone, Copy)]
struct Child {
    metric: f64,
    parent: u32,
    symbol: u8,
}

impl Child {
    /// Metric first, then prefix order. Survivors are stored in prefix
    /// order, so the parent index is the parent's lexicographic rank.
    fn cmp(&self, other: &Self) -> Ordering {
        self.metric
            .total_cmp(&other.metric)
            .then(self.parent.cmp(&other.parent))
            .then(self.symbol.cmp(&other.symbol))
    }
}

/// Final survivors of a beam search, in prefix order.
pub fn beam_search_survivors(
    rx: &RxBlock,
    csi: &CsiView<'_>,
    modulation: Modulation,
    beam_width: usize,
    mode: BeamMode,
) -> Result<Vec<BeamHypothesis>> {
    let (mut survivors, tail) = beam_core(rx, csi, modulation, beam_width, mode)?;
    for (h, t) in survivors.iter_mut().zip(tail) {
        h.metric += t;
    }
    Ok(survivors)
}

/// Beam search with `beam_width` survivors per step.
pub fn beam_search_detect(
    rx: &RxBlock,
    csi: &CsiView<'_>,
    modulation: Modulation,
    beam_width: usize,
    mode: BeamMode,
) -> Result<Decision> {
    let survivors = beam_search_survivors(rx, csi, modulation, beam_width, mode)?;
    let mut best = 0;
    for (i, h) in survivors.iter().enumerate() {
        if h.metric < survivors[best].metric {
            best = i;
        }
    }
    let h = &survivors[best];
    Ok(Decision { symbols: SymbolBlock { indices: h.prefix.clone(), modulation }, metric: h.metric })
}

/// Runs the pruned search over the first `L` columns. Returns survivors
/// (metrics without tail) and their tail metrics (zero in cut mode).
fn beam_core(
    rx: &RxBlock,
    csi: &CsiView<'_>,
    modulation: Modulation,
    beam_width: usize,
    mode: BeamMode,
) -> Result<(Vec<BeamHypothesis>, Vec<f64>)> {
    if beam_width == 0 {
        bail!(Config, "beam width must be at least 1");
    }
    check_shapes(rx, csi, mode)?;
    let len = rx.block_len;
    let table = TapTable::new(csi.channel, modulation);
    let m = table.m;
    let hist = table.memory - 1;
    let nr = table.nr;

    let mut metrics = vec![0.0];
    let mut recent: Vec<u8> = Vec::new();
    let mut depth_hist = 0usize;
    let mut back: Vec<Vec<(u32, u8)>> = Vec::with_capacity(len);
    let mut residual = vec![Complex64::new(0.0, 0.0); nr];
    let mut children: Vec<Child> = Vec::with_capacity(beam_width * m);

    for k in 0..len {
        children.clear();
        let y = rx.column(k);
        for (p, &pm) in metrics.iter().enumerate() {
            table.residual(y, 1, &recent[p * hist..p * hist + depth_hist], &mut residual);
            for s in 0..m as u8 {
                children.push(Child { metric: pm + table.metric(&residual, s), parent: p as u32, symbol: s });
            }
        }
        if children.len() > beam_width {
            children.select_nth_unstable_by(beam_width - 1, Child::cmp);
            children.truncate(beam_width);
        }
        children.sort_unstable_by(|a, b| a.parent.cmp(&b.parent).then(a.symbol.cmp(&b.symbol)));

        let new_hist = (depth_hist + 1).min(hist);
        let mut new_recent = vec![0u8; children.len() * hist];
        for (i, c) in children.iter().enumerate() {
            if hist > 0 {
                let dst = &mut new_recent[i * hist..(i + 1) * hist];
                dst[0] = c.symbol;
                let src = c.parent as usize * hist;
                dst[1..new_hist].copy_from_slice(&recent[src..src + new_hist - 1]);
            }
        }
        metrics = children.iter().map(|c| c.metric).collect();
        back.push(children.iter().map(|c| (c.parent, c.symbol)).collect());
        recent = new_recent;
        depth_hist = new_hist;
    }

    let mut survivors = Vec::with_capacity(metrics.len());
    let mut tails = Vec::with_capacity(metrics.len());
    let mut scratch = vec![Complex64::new(0.0, 0.0); nr];
    for (i, &metric) in metrics.iter().enumerate() {
        let mut prefix = vec![0u8; len];
        let mut idx = i;
        for k in (0..len).rev() {
            let (parent, sym) = back[k][idx];
            prefix[k] = sym;
            idx = parent as usize;
        }
        let r = recent[i * hist..i * hist + depth_hist].to_vec();
        tails.push(match mode {
            BeamMode::FullBlock => table.tail(rx, &r, &mut scratch),
            BeamMode::Cut => 0.0,
        });
        survivors.push(BeamHypothesis { prefix, metric, recent: r });
    }
    Ok((survivors, tails))
}

/// Symbol-wise nearest-point decision on `y / h0` for a single-tap channel.
pub fn matched_filter_detect(rx: &RxBlock, channel: &ChannelRealization, modulation: Modulation) -> SymbolBlock {
    let h0 = channel.tap(0);
    let energy: f64 = h0.iter().map(|h| h.norm_sqr()).sum();
    let indices = (0..rx.block_len)
        .map(|k| {
            let z: Complex64 = rx.column(k).iter().zip(h0).map(|(y, h)| h.conj() * y).sum();
            modulation.nearest(z / energy)
        })
        .collect();
    SymbolBlock { indices, modulation }
}
