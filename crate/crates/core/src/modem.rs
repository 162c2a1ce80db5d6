//! Modulation, the multi-user convolutional transmit model and labeled
//! dataset generation.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::ChannelRealization;
use crate::error::{bail, Result};
use crate::math;
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Modulation {
    Bpsk,
    Qpsk,
}

impl Modulation {
    pub fn alphabet_size(self) -> usize {
        match self {
            Modulation::Bpsk => 2,
            Modulation::Qpsk => 4,
        }
    }

    /// Constellation point for `index`. BPSK maps 0 to +1 and 1 to -1; QPSK is
    /// Gray coded with the high bit on the in-phase sign and the low bit on
    /// the quadrature sign, so index 0 is `(1 + j) / sqrt(2)`.
    #[inline]
    pub fn point(self, index: u8) -> Complex64 {
        match self {
            Modulation::Bpsk => Complex64::new(if index == 0 { 1.0 } else { -1.0 }, 0.0),
            Modulation::Qpsk => {
                let s = core::f64::consts::FRAC_1_SQRT_2;
                let re = if index & 2 == 0 { s } else { -s };
                let im = if index & 1 == 0 { s } else { -s };
                Complex64::new(re, im)
            }
        }
    }

    pub fn constellation(self) -> Vec<Complex64> {
        (0..self.alphabet_size() as u8).map(|i| self.point(i)).collect()
    }

    /// Index of the closest constellation point (lowest index on ties).
    pub fn nearest(self, y: Complex64) -> u8 {
        let mut best = 0u8;
        let mut best_d = f64::INFINITY;
        for i in 0..self.alphabet_size() as u8 {
            let d = (y - self.point(i)).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SymbolBlock {
    pub indices: Vec<u8>,
    pub modulation: Modulation,
}

impl SymbolBlock {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn points(&self) -> Vec<Complex64> {
        self.indices.iter().map(|&i| self.modulation.point(i)).collect()
    }

    /// Number of positions where `self` and `other` differ.
    pub fn symbol_errors(&self, other: &SymbolBlock) -> usize {
        self.indices.iter().zip(&other.indices).filter(|(a, b)| a != b).count()
    }
}

/// Maps alphabet indices (bits for BPSK) to a symbol block.
pub fn modulate(indices: &[u8], modulation: Modulation) -> Result<SymbolBlock> {
    if indices.is_empty() {
        bail!(Domain, "symbol block must not be empty");
    }
    let m = modulation.alphabet_size();
    if let Some(bad) = indices.iter().find(|&&i| i as usize >= m) {
        bail!(Domain, "symbol index {bad} outside alphabet of size {m}");
    }
    Ok(SymbolBlock { indices: indices.to_vec(), modulation })
}

/// Received samples `y[i]` for `i in 0..L+T-1`, stored time-major
/// (`samples[i * Nr + n]`).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RxBlock {
    pub samples: Vec<Complex64>,
    pub num_antennas: usize,
    /// Message length `L`; columns from `L` on are the convolution tail.
    pub block_len: usize,
    /// Total variance per complex noise entry.
    pub noise_variance: f64,
    pub channel_id: u64,
}

impl RxBlock {
    pub fn num_columns(&self) -> usize {
        self.samples.len() / self.num_antennas
    }

    #[inline]
    pub fn column(&self, i: usize) -> &[Complex64] {
        &self.samples[i * self.num_antennas..(i + 1) * self.num_antennas]
    }
}

/// Noise variance for a given SNR, where SNR is the average received symbol
/// energy per antenna over the per-antenna complex noise variance. On a
/// normalized channel this is `10^(-snr_db / 10)`.
pub fn snr_to_noise_variance(snr_db: f64, channel: &ChannelRealization) -> f64 {
    channel.energy_per_antenna() / math::db_to_linear(snr_db)
}

/// Noiseless superposition `sum_k sum_l H_k[l] x_k[i - l]`, symbols outside
/// `[0, L)` taken as zero.
pub fn convolve(blocks: &[SymbolBlock], channels: &[&ChannelRealization]) -> Result<RxBlock> {
    if blocks.is_empty() || blocks.len() != channels.len() {
        bail!(Domain, "need one channel per user, got {} blocks and {} channels", blocks.len(), channels.len());
    }
    let nr = channels[0].num_antennas();
    let memory = channels[0].memory();
    let len = blocks[0].len();
    if len == 0 {
        bail!(Domain, "symbol block must not be empty");
    }
    if channels.iter().any(|c| c.num_antennas() != nr || c.memory() != memory) {
        bail!(Domain, "all users' channels must share antenna count and memory");
    }
    if blocks.iter().any(|b| b.len() != len) {
        bail!(Domain, "all users' blocks must share the block length");
    }

    let cols = len + memory - 1;
    let mut samples = alloc::vec![Complex64::new(0.0, 0.0); cols * nr];
    for (block, channel) in blocks.iter().zip(channels) {
        for (k, x) in block.points().into_iter().enumerate() {
            for l in 0..memory {
                let out = &mut samples[(k + l) * nr..(k + l + 1) * nr];
                for (y, h) in out.iter_mut().zip(channel.tap(l)) {
                    *y += h * x;
                }
            }
        }
    }
    Ok(RxBlock { samples, num_antennas: nr, block_len: len, noise_variance: 0.0, channel_id: channels[0].seed() })
}

/// Adds i.i.d. circularly symmetric Gaussian noise of total variance
/// `noise_variance` per entry.
pub fn add_noise<R: Rng + ?Sized>(rx: &mut RxBlock, noise_variance: f64, rng: &mut R) -> Result<()> {
    if !(noise_variance.is_finite() && noise_variance >= 0.0) {
        bail!(Domain, "noise variance must be finite and non-negative");
    }
    let sd = math::sqrt(noise_variance / 2.0);
    for y in &mut rx.samples {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *y += Complex64::new(re * sd, im * sd);
    }
    rx.noise_variance = noise_variance;
    Ok(())
}

/// Channel output for all users plus receiver noise.
pub fn transmit<R: Rng + ?Sized>(
    blocks: &[SymbolBlock],
    channels: &[&ChannelRealization],
    noise_variance: f64,
    rng: &mut R,
) -> Result<RxBlock> {
    let mut rx = convolve(blocks, channels)?;
    add_noise(&mut rx, noise_variance, rng)?;
    Ok(rx)
}

/// How the per-block SNR of a dataset is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SnrMode {
    Fixed(f64),
    /// Drawn uniformly from `[lo, hi]` dB for every block.
    Uniform { lo: f64, hi: f64 },
}

impl SnrMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SnrMode::Fixed(db) if !db.is_finite() => bail!(Config, "SNR must be finite"),
            SnrMode::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite()) => {
                bail!(Config, "SNR range must be finite")
            }
            SnrMode::Uniform { lo, hi } if lo > hi => bail!(Config, "empty SNR range [{lo}, {hi}]"),
            _ => Ok(()),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SnrMode::Fixed(db) => db,
            SnrMode::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinkConfig {
    pub snr: SnrMode,
    pub num_users: usize,
    pub block_length: usize,
    pub seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { snr: SnrMode::Fixed(0.0), num_users: 1, block_length: 200, seed: 0 }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_length == 0 {
            bail!(Config, "block length must be at least 1");
        }
        if self.num_users == 0 {
            bail!(Config, "need at least one user");
        }
        self.snr.validate()
    }
}

/// What a dataset may be used for. Training refuses evaluation datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DatasetRole {
    Train,
    Eval,
}

impl DatasetRole {
    fn stream(self) -> u64 {
        match self {
            DatasetRole::Train => stream::TRAIN_DATA,
            DatasetRole::Eval => stream::EVAL_DATA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sample {
    pub symbols: SymbolBlock,
    pub rx: RxBlock,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    /// Provenance id derived from the link seed, role and channel.
    pub id: u64,
    pub role: DatasetRole,
    pub link: LinkConfig,
    pub modulation: Modulation,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Draws one labeled block with uniform i.i.d. symbols.
pub fn generate_block<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    modulation: Modulation,
    block_length: usize,
    snr_db: f64,
    rng: &mut R,
) -> Result<Sample> {
    let m = modulation.alphabet_size() as u8;
    let indices: Vec<u8> = (0..block_length).map(|_| rng.random_range(0..m)).collect();
    let symbols = modulate(&indices, modulation)?;
    let sigma2 = snr_to_noise_variance(snr_db, channel);
    let rx = transmit(core::slice::from_ref(&symbols), &[channel], sigma2, rng)?;
    Ok(Sample { symbols, rx, snr_db })
}

/// Builds `num_blocks` labeled single-user blocks. Block `b` uses its own
/// stream derived from `(link.seed, role, b)`, so any block can be
/// regenerated independently.
pub fn generate_dataset(
    channel: &ChannelRealization,
    link: &LinkConfig,
    modulation: Modulation,
    num_blocks: usize,
    role: DatasetRole,
) -> Result<Dataset> {
    link.validate()?;
    let samples = (0..num_blocks)
        .map(|b| {
            let mut rng = seed::rng(seed::derive(link.seed, &[role.stream(), b as u64]));
            let snr_db = link.snr.draw(&mut rng);
            generate_block(channel, modulation, link.block_length, snr_db, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        id: seed::derive(link.seed, &[role.stream(), channel.seed()]),
        role,
        link: link.clone(),
        modulation,
        samples,
    })
}
