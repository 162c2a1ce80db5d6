use std::path::PathBuf;

use mmwdet_core::channel::ChannelConfig;
use mmwdet_core::modem::{Modulation, SnrMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Sweep,
    Robustness,
    Convergence,
    Runtime,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sweep => "sweep",
            Self::Robustness => "robustness",
            Self::Convergence => "convergence",
            Self::Runtime => "runtime",
        }
    }
}

/// SNR of the SBRNN training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSnr {
    /// A separate model per grid point, trained at that point's SNR.
    Matched,
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl TrainSnr {
    pub fn label(&self) -> String {
        match self {
            Self::Matched => "matched".into(),
            Self::Fixed(db) => format!("fixed:{db}"),
            Self::Uniform { lo, hi } => format!("uniform:{lo}:{hi}"),
        }
    }

    /// The training-set SNR mode for a model evaluated at `eval_snr`.
    pub fn mode_for(&self, eval_snr: f64) -> SnrMode {
        match *self {
            Self::Matched => SnrMode::Fixed(eval_snr),
            Self::Fixed(db) => SnrMode::Fixed(db),
            Self::Uniform { lo, hi } => SnrMode::Uniform { lo, hi },
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = || HarnessError::Config(format!("training SNR `{s}` is not matched, fixed:DB or uniform:LO:HI"));
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["matched"] => Ok(Self::Matched),
            ["fixed", db] => Ok(Self::Fixed(num(db)?)),
            ["uniform", lo, hi] => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo > hi {
                    return Err(bad());
                }
                Ok(Self::Uniform { lo, hi })
            }
            _ => Err(bad()),
        }
    }
}

/// SBRNN optimizer settings shared by every experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub windows_per_block: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 32, windows_per_block: 4, learning_rate: 1e-3, val_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSettings {
    /// Realizations in the study; the last one trains the base model.
    pub num_channels: usize,
    pub threshold: f64,
    /// Validation accuracy is checked every this many training blocks.
    pub eval_interval: usize,
    /// Training blocks after which a run counts as not converged.
    pub max_samples: usize,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self { num_channels: 9, threshold: 0.9, eval_interval: 50, max_samples: 4000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeSettings {
    pub antenna_counts: Vec<usize>,
    pub blocks: usize,
    pub warmup_blocks: usize,
    /// Timed blocks are split into this many groups; the reported time is
    /// the median of the group means.
    pub groups: usize,
}

impl Default for RuntimeSettings {
    fn default() -> Self {
        Self { antenna_counts: vec![4, 128], blocks: 50, warmup_blocks: 3, groups: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub num_antennas: usize,
    pub snr_grid: Vec<f64>,
    pub train_snr: TrainSnr,
    pub num_channels: usize,
    pub symbols_per_channel: usize,
    pub block_length: usize,
    pub train_blocks: usize,
    pub beam_width: usize,
    pub window: usize,
    pub hidden_size: usize,
    /// Mean relative amplitude distortion for the robustness study.
    pub distortion: f64,
    pub modulation: Modulation,
    /// Channel statistics; `seed` and `num_antennas` are overridden per
    /// realization.
    pub channel: ChannelConfig,
    pub training: TrainingSettings,
    pub convergence: ConvergenceSettings,
    pub runtime: RuntimeSettings,
    pub seed: u64,
    /// Not part of the configuration hash.
    #[serde(skip)]
    pub output: Option<PathBuf>,
    /// Directory of trained checkpoints keyed by their training inputs.
    #[serde(skip)]
    pub model_cache: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        let train_snr = match kind {
            ExperimentKind::Sweep => TrainSnr::Matched,
            _ => TrainSnr::Fixed(0.0),
        };
        Self {
            kind,
            num_antennas: 4,
            snr_grid: (0..9).map(|i| -6.0 + 2.0 * i as f64).collect(),
            train_snr,
            num_channels: 5,
            symbols_per_channel: 200_000,
            block_length: 200,
            train_blocks: 4000,
            beam_width: 300,
            window: 30,
            hidden_size: 20,
            distortion: 0.025,
            modulation: Modulation::Bpsk,
            channel: ChannelConfig::default(),
            training: TrainingSettings::default(),
            convergence: ConvergenceSettings::default(),
            runtime: RuntimeSettings::default(),
            seed,
            output: None,
            model_cache: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(HarnessError::Config(m.into()));
        if self.snr_grid.is_empty() || self.snr_grid.iter().any(|s| !s.is_finite()) {
            return fail("SNR grid must be nonempty and finite");
        }
        if self.num_antennas == 0
            || self.num_channels == 0
            || self.symbols_per_channel == 0
            || self.block_length == 0
            || self.train_blocks == 0
            || self.beam_width == 0
            || self.window == 0
            || self.hidden_size == 0
        {
            return fail("all counts must be at least 1");
        }
        if !(0.0..1.0).contains(&self.distortion) {
            return fail("distortion must lie in [0, 1)");
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 || self.training.windows_per_block == 0 {
            return fail("training counts must be at least 1");
        }
        if self.kind == ExperimentKind::Convergence
            && (self.convergence.num_channels < 2 || self.convergence.eval_interval == 0)
        {
            return fail("the convergence study needs at least two channels and a positive interval");
        }
        if self.kind == ExperimentKind::Runtime
            && (self.runtime.antenna_counts.is_empty() || self.runtime.blocks == 0 || self.runtime.groups == 0)
        {
            return fail("runtime benchmark needs antenna counts, blocks and groups");
        }
        self.channel.validate()?;
        Ok(())
    }

    /// Blocks evaluated per channel and SNR point.
    pub fn eval_blocks(&self) -> usize {
        self.symbols_per_channel.div_ceil(self.block_length)
    }

    /// Short SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses `lo:step:hi` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || HarnessError::Config(format!("bad SNR grid `{s}`"));
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let (lo, step, hi) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step <= 0.0 || hi < lo {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| lo + step * i as f64).collect());
    }
    s.split(',').map(num).collect()
}
