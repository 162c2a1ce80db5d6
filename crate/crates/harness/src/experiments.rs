//! The four studies. Every random stream is derived from the master seed
//! and a path naming its role, so any row can be regenerated alone and the
//! detectors at one (channel, SNR) point see identical received samples.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use mmwdet_core::channel::{self, ChannelConfig, ChannelRealization, ClusterSet};
use mmwdet_core::modem::{
    self, generate_dataset, snr_to_noise_variance, Dataset, DatasetRole, LinkConfig, Modulation, Sample, SnrMode,
};
use mmwdet_core::sbrnn::{self, SbrnnConfig, SbrnnModel, TrainConfig, TrainReport};
use mmwdet_core::seed::{self, stream};
use mmwdet_core::viterbi::{beam_search_detect, BeamMode, CsiView};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::files;
use crate::records::{median_of_means, wilson_interval, ConvergenceRecord, RuntimeRecord, SerRecord, Z95};

pub const SBRNN: &str = "sbrnn";
pub const VITERBI_FULL: &str = "viterbi_full";
pub const VITERBI_CUT: &str = "viterbi_cut";
pub const VITERBI_MISMATCHED: &str = "viterbi_mismatched";
pub const VITERBI_PERFECT: &str = "viterbi_perfect";
pub const NOOP: &str = "noop";

/// Seed-path suffix identifying a training SNR mode.
fn mode_path(mode: SnrMode) -> Vec<u64> {
    match mode {
        SnrMode::Fixed(db) => vec![1, db.to_bits()],
        SnrMode::Uniform { lo, hi } => vec![2, lo.to_bits(), hi.to_bits()],
    }
}

fn path_with(prefix: &[u64], rest: &[u64]) -> Vec<u64> {
    prefix.iter().chain(rest).copied().collect()
}

/// Channel statistics for realization `index` with `num_antennas` antennas.
pub fn channel_config(config: &ExperimentConfig, index: usize, num_antennas: usize) -> ChannelConfig {
    ChannelConfig {
        num_antennas,
        seed: seed::derive(config.seed, &[stream::CHANNEL, index as u64, num_antennas as u64]),
        ..config.channel.clone()
    }
}

pub fn realize_channel(config: &ExperimentConfig, index: usize) -> Result<(ClusterSet, ChannelRealization)> {
    Ok(channel::generate(&channel_config(config, index, config.num_antennas))?)
}

pub fn sbrnn_config(config: &ExperimentConfig, num_antennas: usize) -> SbrnnConfig {
    SbrnnConfig {
        num_antennas,
        hidden_size: config.hidden_size,
        window: config.window,
        modulation: config.modulation,
        ..SbrnnConfig::default()
    }
}

/// Evaluation blocks for one channel and SNR point.
pub fn eval_dataset(config: &ExperimentConfig, channel: &ChannelRealization, index: usize, snr_db: f64) -> Result<Dataset> {
    let link = LinkConfig {
        snr: SnrMode::Fixed(snr_db),
        num_users: 1,
        block_length: config.block_length,
        seed: seed::derive(config.seed, &[stream::EVAL_DATA, index as u64, snr_db.to_bits()]),
    };
    Ok(generate_dataset(channel, &link, config.modulation, config.eval_blocks(), DatasetRole::Eval)?)
}

pub fn train_dataset(config: &ExperimentConfig, channel: &ChannelRealization, index: usize, mode: SnrMode) -> Result<Dataset> {
    let link = LinkConfig {
        snr: mode,
        num_users: 1,
        block_length: config.block_length,
        seed: seed::derive(config.seed, &path_with(&[stream::TRAIN_DATA, index as u64], &mode_path(mode))),
    };
    Ok(generate_dataset(channel, &link, config.modulation, config.train_blocks, DatasetRole::Train)?)
}

fn train_config(config: &ExperimentConfig, index: usize, mode: SnrMode) -> TrainConfig {
    let t = &config.training;
    TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        windows_per_block: t.windows_per_block,
        learning_rate: t.learning_rate,
        val_fraction: t.val_fraction,
        seed: seed::derive(config.seed, &path_with(&[stream::TRAINING, index as u64], &mode_path(mode))),
        ..TrainConfig::default()
    }
}

fn init_model(config: &ExperimentConfig, index: usize, mode: SnrMode, num_antennas: usize) -> Result<SbrnnModel> {
    let mut rng = seed::rng(seed::derive(config.seed, &path_with(&[stream::MODEL_INIT, index as u64], &mode_path(mode))));
    Ok(SbrnnModel::init(sbrnn_config(config, num_antennas), &mut rng)?)
}

/// Cache file name covering everything that determines a trained model.
fn cache_key(config: &ExperimentConfig, channel: &ChannelRealization, index: usize, mode: SnrMode) -> String {
    let key = serde_json::json!({
        "seed": config.seed,
        "index": index,
        "channel_seed": channel.seed(),
        "channel": channel_config(config, index, channel.num_antennas()),
        "mode": mode,
        "training": config.training,
        "train_blocks": config.train_blocks,
        "block_length": config.block_length,
        "sbrnn": sbrnn_config(config, channel.num_antennas()),
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    let hex: String = digest.iter().take(12).map(|b| format!("{b:02x}")).collect();
    format!("sbrnn-{hex}.ckpt")
}

/// Trains (or loads from the model cache) the SBRNN for channel `index`.
/// The report is `None` when the model came from the cache.
pub fn trained_model(
    config: &ExperimentConfig,
    channel: &ChannelRealization,
    index: usize,
    mode: SnrMode,
) -> Result<(SbrnnModel, Option<TrainReport>)> {
    let cached: Option<PathBuf> = config.model_cache.as_ref().map(|d| d.join(cache_key(config, channel, index, mode)));
    if let Some(path) = cached.as_deref().filter(|p| p.exists()) {
        info!("loading cached model {}", path.display());
        return Ok((files::load_checkpoint(path)?, None));
    }
    let data = train_dataset(config, channel, index, mode)?;
    let model = init_model(config, index, mode, channel.num_antennas())?;
    let started = Instant::now();
    let (model, report) = sbrnn::train(model, &data, &train_config(config, index, mode))?;
    info!(
        "trained channel {index} at {mode:?} in {:.1?}, final validation accuracy {:?}",
        started.elapsed(),
        report.history.last().and_then(|h| h.val_accuracy)
    );
    if let Some(path) = cached {
        std::fs::create_dir_all(path.parent().unwrap_or(Path::new("."))).map_err(crate::error::io_err(&path))?;
        files::save_checkpoint(&path, &model)?;
    }
    Ok((model, Some(report)))
}

/// Short SHA-256 over the received samples of every block.
pub fn samples_hash<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> String {
    let mut h = Sha256::new();
    for s in samples {
        for v in &s.rx.samples {
            h.update(v.re.to_le_bytes());
            h.update(v.im.to_le_bytes());
        }
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

struct Tally {
    errors: u64,
    symbols: u64,
    seconds: f64,
    blocks: usize,
}

fn tally<F>(samples: &[Sample], mut detect: F) -> Result<Tally>
where
    F: FnMut(&Sample) -> Result<modem::SymbolBlock>,
{
    let mut t = Tally { errors: 0, symbols: 0, seconds: 0.0, blocks: samples.len() };
    for s in samples {
        let started = Instant::now();
        let decided = detect(s)?;
        t.seconds += started.elapsed().as_secs_f64();
        t.errors += decided.symbol_errors(&s.symbols) as u64;
        t.symbols += s.symbols.len() as u64;
    }
    Ok(t)
}

pub fn sbrnn_detect(model: &SbrnnModel, s: &Sample) -> Result<modem::SymbolBlock> {
    let pmfs = model.detect(&s.rx)?;
    Ok(sbrnn::hard_decide(&pmfs, model.config().modulation))
}

pub fn viterbi_detect(
    s: &Sample,
    channel: &ChannelRealization,
    modulation: Modulation,
    beam_width: usize,
    mode: BeamMode,
) -> Result<modem::SymbolBlock> {
    let csi = CsiView { channel, noise_variance: s.rx.noise_variance };
    Ok(beam_search_detect(&s.rx, &csi, modulation, beam_width, mode)?.symbols)
}

struct RowContext<'a> {
    config: &'a ExperimentConfig,
    config_hash: &'a str,
    train_snr: String,
    snr_db: f64,
    channel: usize,
    samples_hash: &'a str,
}

impl RowContext<'_> {
    fn row(&self, detector: &str, t: &Tally) -> SerRecord {
        let (ci_low, ci_high) = wilson_interval(t.errors, t.symbols, Z95);
        SerRecord {
            experiment: self.config.kind.as_str().into(),
            detector: detector.into(),
            train_snr: self.train_snr.clone(),
            snr_db: self.snr_db,
            channel: self.channel,
            errors: t.errors,
            symbols: t.symbols,
            ser: t.errors as f64 / t.symbols.max(1) as f64,
            ci_low,
            ci_high,
            time_per_block_s: t.seconds / t.blocks.max(1) as f64,
            samples_hash: self.samples_hash.into(),
            seed: self.config.seed,
            config_hash: self.config_hash.into(),
            status: "ok".into(),
        }
    }

    fn failed(&self, detector: &str, status: String) -> SerRecord {
        SerRecord {
            errors: 0,
            symbols: 0,
            ser: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            status,
            ..self.row(detector, &Tally { errors: 0, symbols: 0, seconds: 0.0, blocks: 0 })
        }
    }
}

/// Trains a model per training mode lazily; a failed training is kept as
/// its diagnostic so the remaining cells still run.
struct ModelSlot {
    mode: SnrMode,
    model: std::result::Result<SbrnnModel, String>,
}

fn model_for<'s>(
    slots: &'s mut Vec<ModelSlot>,
    config: &ExperimentConfig,
    channel: &ChannelRealization,
    index: usize,
    mode: SnrMode,
) -> Result<&'s std::result::Result<SbrnnModel, String>> {
    if let Some(i) = slots.iter().position(|s| s.mode == mode) {
        return Ok(&slots[i].model);
    }
    let model = match trained_model(config, channel, index, mode) {
        Ok((m, _)) => Ok(m),
        Err(HarnessError::Core(e @ mmwdet_core::Error::Training(_))) => {
            warn!("channel {index}, {mode:?}: {e}");
            Err(format!("diverged: {e}"))
        }
        Err(e) => return Err(e),
    };
    slots.push(ModelSlot { mode, model });
    Ok(&slots.last().unwrap().model)
}

fn sbrnn_row(ctx: &RowContext<'_>, model: &std::result::Result<SbrnnModel, String>, samples: &[Sample]) -> Result<SerRecord> {
    Ok(match model {
        Ok(m) => ctx.row(SBRNN, &tally(samples, |s| sbrnn_detect(m, s))?),
        Err(msg) => ctx.failed(SBRNN, msg.clone()),
    })
}

/// SBRNN, full-block Viterbi and Viterbi-cut on shared blocks; one row per
/// detector, SNR point and channel.
pub fn run_ser_sweep(config: &ExperimentConfig) -> Result<Vec<SerRecord>> {
    config.validate()?;
    let hash = config.hash();
    let mut rows = Vec::new();
    for c in 0..config.num_channels {
        let (_, channel) = realize_channel(config, c)?;
        let mut slots = Vec::new();
        for &snr in &config.snr_grid {
            let mode = config.train_snr.mode_for(snr);
            let data = eval_dataset(config, &channel, c, snr)?;
            let sh = samples_hash(&data.samples);
            let ctx = RowContext {
                config,
                config_hash: &hash,
                train_snr: config.train_snr.label(),
                snr_db: snr,
                channel: c,
                samples_hash: &sh,
            };
            let model = model_for(&mut slots, config, &channel, c, mode)?;
            rows.push(sbrnn_row(&ctx, model, &data.samples)?);
            for (id, mode) in [(VITERBI_FULL, BeamMode::FullBlock), (VITERBI_CUT, BeamMode::Cut)] {
                let t = tally(&data.samples, |s| viterbi_detect(s, &channel, config.modulation, config.beam_width, mode))?;
                rows.push(ctx.row(id, &t));
            }
            info!("sweep channel {c} snr {snr} dB done");
        }
    }
    Ok(rows)
}

/// Evaluation blocks whose channel amplitudes are re-perturbed per block.
/// The perturbed clusters are rendered with the nominal normalization and
/// the noise variance follows the nominal channel, so at level 0 the blocks
/// equal [`eval_dataset`]'s.
pub fn perturbed_blocks(
    config: &ExperimentConfig,
    clusters: &ClusterSet,
    nominal: &ChannelRealization,
    index: usize,
    snr_db: f64,
) -> Result<Vec<(ChannelRealization, Sample)>> {
    let ch_cfg = channel_config(config, index, config.num_antennas);
    let link_seed = seed::derive(config.seed, &[stream::EVAL_DATA, index as u64, snr_db.to_bits()]);
    let sigma2 = snr_to_noise_variance(snr_db, nominal);
    let m = config.modulation.alphabet_size() as u8;
    (0..config.eval_blocks())
        .map(|b| {
            let mut prng = seed::rng(seed::derive(config.seed, &[stream::PERTURB, index as u64, snr_db.to_bits(), b as u64]));
            let perturbed = channel::perturb_amplitudes(clusters, config.distortion, &mut prng)?;
            let actual = channel::render_taps_scaled(&perturbed, &ch_cfg, nominal.normalization())?;
            let mut rng = seed::rng(seed::derive(link_seed, &[stream::EVAL_DATA, b as u64]));
            let indices: Vec<u8> = (0..config.block_length).map(|_| rng.random_range(0..m)).collect();
            let symbols = modem::modulate(&indices, config.modulation)?;
            let rx = modem::transmit(std::slice::from_ref(&symbols), &[&actual], sigma2, &mut rng)?;
            Ok((actual, Sample { symbols, rx, snr_db }))
        })
        .collect()
}

/// SBRNN trained on the nominal channel against beam-Viterbi given the
/// nominal (mismatched) CSI and the per-block true CSI.
pub fn run_csi_robustness(config: &ExperimentConfig) -> Result<Vec<SerRecord>> {
    config.validate()?;
    let hash = config.hash();
    let mut rows = Vec::new();
    for c in 0..config.num_channels {
        let (clusters, nominal) = realize_channel(config, c)?;
        let mut slots = Vec::new();
        for &snr in &config.snr_grid {
            let mode = config.train_snr.mode_for(snr);
            let blocks = perturbed_blocks(config, &clusters, &nominal, c, snr)?;
            let samples: Vec<Sample> = blocks.iter().map(|(_, s)| s.clone()).collect();
            let sh = samples_hash(&samples);
            let ctx = RowContext {
                config,
                config_hash: &hash,
                train_snr: config.train_snr.label(),
                snr_db: snr,
                channel: c,
                samples_hash: &sh,
            };
            let model = model_for(&mut slots, config, &nominal, c, mode)?;
            rows.push(sbrnn_row(&ctx, model, &samples)?);
            let t = tally(&samples, |s| viterbi_detect(s, &nominal, config.modulation, config.beam_width, BeamMode::FullBlock))?;
            rows.push(ctx.row(VITERBI_MISMATCHED, &t));
            let mut k = 0;
            let t = tally(&samples, |s| {
                let actual = &blocks[k].0;
                k += 1;
                viterbi_detect(s, actual, config.modulation, config.beam_width, BeamMode::FullBlock)
            })?;
            rows.push(ctx.row(VITERBI_PERFECT, &t));
            info!("robustness channel {c} snr {snr} dB done");
        }
    }
    Ok(rows)
}

/// Samples-to-threshold from scratch and warm-started from a base model
/// trained on the last realization, for every other realization. Rows are
/// sorted by the warm-start count; runs that never reach the threshold sort
/// last.
pub fn run_convergence_study(config: &ExperimentConfig) -> Result<Vec<ConvergenceRecord>> {
    config.validate()?;
    let hash = config.hash();
    let conv = &config.convergence;
    let mode = config.train_snr.mode_for(0.0);
    let base_index = conv.num_channels - 1;
    let (_, base_channel) = realize_channel(config, base_index)?;
    let (base, _) = trained_model(config, &base_channel, base_index, mode)?;

    let mut rows = Vec::new();
    for c in 0..base_index {
        let (_, channel) = realize_channel(config, c)?;
        let data = train_dataset(config, &channel, c, mode)?;
        let n_train = data.len() - ((config.training.val_fraction * data.len() as f64).round() as usize).min(data.len());
        let tc = TrainConfig {
            epochs: conv.max_samples.div_ceil(n_train.max(1)) + 1,
            eval_interval: Some(conv.eval_interval),
            accuracy_threshold: Some(conv.threshold),
            stop_at_threshold: true,
            max_samples: Some(conv.max_samples),
            ..train_config(config, c, mode)
        };
        let scratch = init_model(config, c, mode, config.num_antennas)?;
        let (_, rs) = sbrnn::train(scratch, &data, &tc)?;
        let (_, rw) = sbrnn::fine_tune(&base, &data, &tc)?;
        info!("convergence channel {c}: scratch {:?}, warm {:?}", rs.samples_to_threshold, rw.samples_to_threshold);
        rows.push(ConvergenceRecord {
            rank: 0,
            channel: c,
            scratch_samples: rs.samples_to_threshold,
            warm_samples: rw.samples_to_threshold,
            threshold: conv.threshold,
            eval_interval: conv.eval_interval,
            max_samples: conv.max_samples,
            seed: config.seed,
            config_hash: hash.clone(),
        });
    }
    let key = |r: &ConvergenceRecord| (r.warm_samples.unwrap_or(usize::MAX), r.scratch_samples.unwrap_or(usize::MAX), r.channel);
    rows.sort_by_key(key);
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i;
    }
    Ok(rows)
}

/// Per-block wall times after `warmup` untimed calls.
fn time_blocks<F>(samples: &[Sample], warmup: usize, mut detect: F) -> Result<Vec<f64>>
where
    F: FnMut(&Sample) -> Result<()>,
{
    for s in samples.iter().cycle().take(warmup) {
        detect(s)?;
    }
    samples
        .iter()
        .map(|s| {
            let started = Instant::now();
            detect(s)?;
            Ok(started.elapsed().as_secs_f64())
        })
        .collect()
}

/// Detection time per block for a no-op, the SBRNN and full-block Viterbi
/// at each configured antenna count. The SBRNN weights are a seeded random
/// initialization, since detection cost does not depend on their values.
pub fn run_runtime_benchmark(config: &ExperimentConfig) -> Result<Vec<RuntimeRecord>> {
    config.validate()?;
    let hash = config.hash();
    let rt = &config.runtime;
    let snr = config.snr_grid[config.snr_grid.len() / 2];
    let mut rows = Vec::new();
    for &nr in &rt.antenna_counts {
        let (_, channel) = channel::generate(&channel_config(config, 0, nr))?;
        let link = LinkConfig {
            snr: SnrMode::Fixed(snr),
            num_users: 1,
            block_length: config.block_length,
            seed: seed::derive(config.seed, &[stream::EVAL_DATA, nr as u64, snr.to_bits()]),
        };
        let data = generate_dataset(&channel, &link, config.modulation, rt.blocks, DatasetRole::Eval)?;
        let model = init_model(config, 0, SnrMode::Fixed(snr), nr)?;
        let mut sink = 0.0;
        let noop = time_blocks(&data.samples, rt.warmup_blocks, |s| {
            sink += std::hint::black_box(s.rx.samples[0].re);
            Ok(())
        })?;
        std::hint::black_box(sink);
        let sb = time_blocks(&data.samples, rt.warmup_blocks, |s| {
            std::hint::black_box(model.detect(&s.rx)?);
            Ok(())
        })?;
        let vt = time_blocks(&data.samples, rt.warmup_blocks, |s| {
            std::hint::black_box(viterbi_detect(s, &channel, config.modulation, config.beam_width, BeamMode::FullBlock)?);
            Ok(())
        })?;
        let viterbi_median = median_of_means(&vt, rt.groups);
        for (id, times) in [(NOOP, &noop), (SBRNN, &sb), (VITERBI_FULL, &vt)] {
            let median = median_of_means(times, rt.groups);
            rows.push(RuntimeRecord {
                detector: id.into(),
                num_antennas: nr,
                blocks: times.len(),
                mean_time_per_block_s: times.iter().sum::<f64>() / times.len() as f64,
                median_of_means_s: median,
                speedup_vs_viterbi: viterbi_median / median,
                seed: config.seed,
                config_hash: hash.clone(),
            });
        }
        info!("runtime Nr={nr}: sbrnn {:.3e} s, viterbi {:.3e} s", median_of_means(&sb, rt.groups), viterbi_median);
    }
    Ok(rows)
}

/// Default CSV name for an experiment.
pub fn default_output(kind: ExperimentKind, seed: u64) -> String {
    format!("{}-seed{seed}.csv", kind.as_str())
}
