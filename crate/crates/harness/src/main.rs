use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use mmwdet::config::{parse_grid, ExperimentConfig, ExperimentKind, TrainSnr};
use mmwdet::error::{HarnessError, Result};
use mmwdet::records::{self, HistoryRecord};
use mmwdet::{experiments, files};
use mmwdet_core::channel::{self, ChannelConfig};
use mmwdet_core::modem::{generate_dataset, DatasetRole, LinkConfig, Modulation, SnrMode};
use mmwdet_core::sbrnn::{self, SbrnnConfig, SbrnnModel, TrainConfig};
use mmwdet_core::seed::{self, stream};
use mmwdet_core::viterbi::BeamMode;

/// Default directory for experiment CSVs when `--out` is not given.
const OUT_DIR_ENV: &str = "MMWDET_OUT_DIR";

#[derive(Parser)]
#[command(name = "mmwdet", version, about = "mmWave SIMO detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// SER versus SNR for the SBRNN and both beam-Viterbi variants.
    Sweep(ExperimentArgs),
    /// SBRNN against beam-Viterbi with perturbed (mismatched) CSI.
    Robustness(ExperimentArgs),
    /// Samples to reach an accuracy threshold, from scratch and warm-started.
    Convergence(ExperimentArgs),
    /// Per-block detection time at several antenna counts.
    Runtime(ExperimentArgs),
    /// Train an SBRNN on a dataset file and write a checkpoint.
    Train(TrainArgs),
    /// Run a detector over a dataset file and print its SER.
    Detect(DetectArgs),
    /// Draw a channel realization.
    GenChannel(GenChannelArgs),
    /// Generate labeled blocks through a saved channel.
    GenData(GenDataArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModArg {
    Bpsk,
    Qpsk,
}

impl From<ModArg> for Modulation {
    fn from(m: ModArg) -> Self {
        match m {
            ModArg::Bpsk => Modulation::Bpsk,
            ModArg::Qpsk => Modulation::Qpsk,
        }
    }
}

#[derive(Args, Clone, Default)]
struct ChannelArgs {
    /// Channel taps kept (T).
    #[arg(long)]
    memory: Option<usize>,
    #[arg(long)]
    bandwidth_hz: Option<f64>,
    #[arg(long)]
    extra_clusters: Option<f64>,
    #[arg(long)]
    extra_subpaths: Option<f64>,
    #[arg(long)]
    cluster_delay_ns: Option<f64>,
    #[arg(long)]
    subpath_delay_ns: Option<f64>,
    #[arg(long)]
    power_decay_ns: Option<f64>,
    #[arg(long)]
    rolloff: Option<f64>,
}

impl ChannelArgs {
    fn apply(&self, c: &mut ChannelConfig) {
        if let Some(v) = self.memory {
            c.max_memory = v;
        }
        if let Some(v) = self.bandwidth_hz {
            c.bandwidth_hz = v;
        }
        if let Some(v) = self.extra_clusters {
            c.mean_extra_clusters = v;
        }
        if let Some(v) = self.extra_subpaths {
            c.mean_extra_subpaths = v;
        }
        if let Some(v) = self.cluster_delay_ns {
            c.cluster_delay_scale = v * 1e-9;
        }
        if let Some(v) = self.subpath_delay_ns {
            c.subpath_delay_scale = v * 1e-9;
        }
        if let Some(v) = self.power_decay_ns {
            c.power_decay = v * 1e-9;
        }
        if let Some(v) = self.rolloff {
            c.rolloff = v;
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// Master seed; every random stream is derived from it.
    #[arg(long)]
    seed: u64,
    /// Output CSV (default: $MMWDET_OUT_DIR or ./results).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for cached trained models.
    #[arg(long)]
    model_cache: Option<PathBuf>,
    #[arg(long)]
    nr: Option<usize>,
    /// SNR grid in dB, `lo:step:hi` or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<String>,
    /// `matched`, `fixed:DB` or `uniform:LO:HI`.
    #[arg(long, allow_hyphen_values = true)]
    train_snr: Option<String>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    symbols: Option<usize>,
    #[arg(long)]
    block_length: Option<usize>,
    #[arg(long)]
    train_blocks: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Mean relative amplitude distortion (robustness).
    #[arg(long)]
    distortion: Option<f64>,
    #[arg(long, value_enum)]
    modulation: Option<ModArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    windows_per_block: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Realizations in the convergence study.
    #[arg(long)]
    conv_channels: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    max_samples: Option<usize>,
    /// Antenna counts for the runtime benchmark, comma separated.
    #[arg(long, value_delimiter = ',')]
    runtime_nr: Option<Vec<usize>>,
    #[arg(long)]
    runtime_blocks: Option<usize>,
    #[arg(long)]
    warmup_blocks: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[command(flatten)]
    channel: ChannelArgs,
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v.into();
        }
    };
}

impl ExperimentArgs {
    fn config(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::new(kind, self.seed);
        set!(c.num_antennas, self.nr);
        if let Some(s) = &self.snr {
            c.snr_grid = parse_grid(s)?;
        }
        if let Some(s) = &self.train_snr {
            c.train_snr = TrainSnr::parse(s)?;
        }
        set!(c.num_channels, self.channels);
        set!(c.symbols_per_channel, self.symbols);
        set!(c.block_length, self.block_length);
        set!(c.train_blocks, self.train_blocks);
        set!(c.beam_width, self.beam_width);
        set!(c.window, self.window);
        set!(c.hidden_size, self.hidden);
        set!(c.distortion, self.distortion);
        set!(c.modulation, self.modulation);
        set!(c.training.epochs, self.epochs);
        set!(c.training.batch_size, self.batch_size);
        set!(c.training.windows_per_block, self.windows_per_block);
        set!(c.training.learning_rate, self.learning_rate);
        set!(c.training.val_fraction, self.val_fraction);
        set!(c.convergence.num_channels, self.conv_channels);
        set!(c.convergence.threshold, self.threshold);
        set!(c.convergence.eval_interval, self.eval_interval);
        set!(c.convergence.max_samples, self.max_samples);
        set!(c.runtime.antenna_counts, self.runtime_nr);
        set!(c.runtime.blocks, self.runtime_blocks);
        set!(c.runtime.warmup_blocks, self.warmup_blocks);
        set!(c.runtime.groups, self.groups);
        self.channel.apply(&mut c.channel);
        c.output = Some(match &self.out {
            Some(p) => p.clone(),
            None => {
                let dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| "results".into());
                dir.join(experiments::default_output(kind, self.seed))
            }
        });
        c.model_cache = self.model_cache.clone();
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Warm-start from this checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    hidden: usize,
    #[arg(long, default_value_t = 30)]
    window: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long)]
    layer_norm: bool,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    windows_per_block: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Per-epoch loss and accuracy CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorArg {
    Sbrnn,
    ViterbiFull,
    ViterbiCut,
}

#[derive(Args)]
struct DetectArgs {
    /// Dataset file with labeled blocks.
    #[arg(long)]
    input: PathBuf,
    /// SBRNN checkpoint (sbrnn detector).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Channel file used as CSI (Viterbi detectors).
    #[arg(long)]
    channel: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sbrnn")]
    detector: DetectorArg,
    #[arg(long, default_value_t = 300)]
    beam_width: usize,
}

#[derive(Args)]
struct GenChannelArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    nr: usize,
    /// Channel file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the cluster structure as JSON.
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[command(flatten)]
    channel: ChannelArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Train,
    Eval,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    channel: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    blocks: usize,
    /// SNR in dB, or `LO:HI` for a per-block uniform draw.
    #[arg(long, allow_hyphen_values = true, default_value = "0")]
    snr: String,
    #[arg(long, default_value_t = 200)]
    block_length: usize,
    #[arg(long, value_enum, default_value = "bpsk")]
    modulation: ModArg,
    #[arg(long, value_enum, default_value = "train")]
    role: RoleArg,
}

fn parse_snr_mode(s: &str) -> Result<SnrMode> {
    let bad = || HarnessError::Config(format!("SNR `{s}` is neither DB nor LO:HI"));
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
    let mode = match s.split_once(':') {
        Some((lo, hi)) => SnrMode::Uniform { lo: num(lo)?, hi: num(hi)? },
        None => SnrMode::Fixed(num(s)?),
    };
    mode.validate()?;
    Ok(mode)
}

fn run_experiment(kind: ExperimentKind, args: &ExperimentArgs) -> Result<PathBuf> {
    let config = args.config(kind)?;
    let out = config.output.clone().expect("output path is always set");
    info!("{} seed {} config {}", kind.as_str(), config.seed, config.hash());
    match kind {
        ExperimentKind::Sweep => {
            records::write_csv(&out, records::SER_SCHEMA, &experiments::run_ser_sweep(&config)?)?
        }
        ExperimentKind::Robustness => {
            records::write_csv(&out, records::SER_SCHEMA, &experiments::run_csi_robustness(&config)?)?
        }
        ExperimentKind::Convergence => records::write_csv(
            &out,
            records::CONVERGENCE_SCHEMA,
            &experiments::run_convergence_study(&config)?,
        )?,
        ExperimentKind::Runtime => {
            records::write_csv(&out, records::RUNTIME_SCHEMA, &experiments::run_runtime_benchmark(&config)?)?
        }
    }
    Ok(out)
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let data = files::load_dataset(&a.data)?;
    let nr = data
        .samples
        .first()
        .map(|s| s.rx.num_antennas)
        .ok_or_else(|| HarnessError::Config("training set is empty".into()))?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        windows_per_block: a.windows_per_block,
        learning_rate: a.learning_rate,
        val_fraction: a.val_fraction,
        seed: seed::derive(a.seed, &[stream::TRAINING]),
        ..TrainConfig::default()
    };
    let (model, report) = match &a.init {
        Some(init) => sbrnn::fine_tune(&files::load_checkpoint(init)?, &data, &tc)?,
        None => {
            let config = SbrnnConfig {
                num_antennas: nr,
                hidden_size: a.hidden,
                window: a.window,
                num_layers: a.layers,
                modulation: data.modulation,
                layer_norm: a.layer_norm,
            };
            let mut rng = seed::rng(seed::derive(a.seed, &[stream::MODEL_INIT]));
            sbrnn::train(SbrnnModel::init(config, &mut rng)?, &data, &tc)?
        }
    };
    files::save_checkpoint(&a.out, &model)?;
    if let Some(h) = &a.history {
        let rows: Vec<HistoryRecord> = report
            .history
            .iter()
            .map(|e| HistoryRecord {
                epoch: e.epoch,
                mean_loss: e.mean_loss,
                val_accuracy: e.val_accuracy,
                samples_seen: e.samples_seen,
            })
            .collect();
        records::write_csv(h, records::HISTORY_SCHEMA, &rows)?;
    }
    if let Some(last) = report.history.last() {
        println!("final loss {:.6} validation accuracy {:?}", last.mean_loss, last.val_accuracy);
    }
    println!("{}", a.out.display());
    Ok(())
}

/// Symbol errors and count of `detector` over every block in `input`.
fn detect_errors(a: &DetectArgs) -> Result<(u64, u64)> {
    let data = files::load_dataset(&a.input)?;
    let need = |p: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
        p.clone().ok_or_else(|| HarnessError::Config(format!("this detector needs --{what}")))
    };
    let mut errors = 0u64;
    let mut symbols = 0u64;
    let mut count = |decided: &mmwdet_core::modem::SymbolBlock, truth: &mmwdet_core::modem::SymbolBlock| {
        errors += decided.symbol_errors(truth) as u64;
        symbols += truth.len() as u64;
    };
    match a.detector {
        DetectorArg::Sbrnn => {
            let model = files::load_checkpoint(&need(&a.model, "model")?)?;
            for s in &data.samples {
                count(&experiments::sbrnn_detect(&model, s)?, &s.symbols);
            }
        }
        DetectorArg::ViterbiFull | DetectorArg::ViterbiCut => {
            let ch = files::load_channel(&need(&a.channel, "channel")?)?;
            let mode = match a.detector {
                DetectorArg::ViterbiCut => BeamMode::Cut,
                _ => BeamMode::FullBlock,
            };
            for s in &data.samples {
                count(&experiments::viterbi_detect(s, &ch, data.modulation, a.beam_width, mode)?, &s.symbols);
            }
        }
    }
    Ok((errors, symbols))
}

fn run_detect(a: &DetectArgs) -> Result<()> {
    let (errors, symbols) = detect_errors(a)?;
    println!("ser {} errors {errors} symbols {symbols}", errors as f64 / symbols.max(1) as f64);
    Ok(())
}

fn run_gen_channel(a: &GenChannelArgs) -> Result<()> {
    let mut config = ChannelConfig { num_antennas: a.nr, seed: a.seed, ..ChannelConfig::default() };
    a.channel.apply(&mut config);
    let (clusters, ch) = channel::generate(&config)?;
    files::save_channel(&a.out, &ch)?;
    if let Some(p) = &a.clusters {
        files::save_clusters(p, &clusters)?;
    }
    if ch.truncated() {
        log::warn!("channel energy extends beyond {} taps and was truncated", ch.memory());
    }
    println!("{}", a.out.display());
    Ok(())
}

fn run_gen_data(a: &GenDataArgs) -> Result<()> {
    let ch = files::load_channel(&a.channel)?;
    let link = LinkConfig { snr: parse_snr_mode(&a.snr)?, num_users: 1, block_length: a.block_length, seed: a.seed };
    let role = match a.role {
        RoleArg::Train => DatasetRole::Train,
        RoleArg::Eval => DatasetRole::Eval,
    };
    let data = generate_dataset(&ch, &link, a.modulation.into(), a.blocks, role)?;
    files::save_dataset(&a.out, &data)?;
    println!("{}", a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let experiment = |kind, args: &ExperimentArgs| -> Result<()> {
        let out = run_experiment(kind, args)?;
        println!("{}", out.display());
        Ok(())
    };
    match &cli.command {
        Command::Sweep(a) => experiment(ExperimentKind::Sweep, a),
        Command::Robustness(a) => experiment(ExperimentKind::Robustness, a),
        Command::Convergence(a) => experiment(ExperimentKind::Convergence, a),
        Command::Runtime(a) => experiment(ExperimentKind::Runtime, a),
        Command::Train(a) => run_train(a),
        Command::Detect(a) => run_detect(a),
        Command::GenChannel(a) => run_gen_channel(a),
        Command::GenData(a) => run_gen_data(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use std::path::Path;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn snr_modes() {
        assert_eq!(parse_snr_mode("-3").unwrap(), SnrMode::Fixed(-3.0));
        assert_eq!(parse_snr_mode("-6:4").unwrap(), SnrMode::Uniform { lo: -6.0, hi: 4.0 });
        assert!(parse_snr_mode("4:-6").is_err());
        assert!(parse_snr_mode("x").is_err());
    }

    #[test]
    fn flags_override_defaults() {
        let cli = Cli::try_parse_from([
            "mmwdet", "sweep", "--seed", "7", "--nr", "2", "--snr", "-6:2:0", "--train-snr", "uniform:-6:4", "--memory", "8",
            "--out", "x.csv",
        ])
        .unwrap();
        let Command::Sweep(a) = cli.command else { panic!() };
        let c = a.config(ExperimentKind::Sweep).unwrap();
        assert_eq!(c.num_antennas, 2);
        assert_eq!(c.snr_grid, vec![-6.0, -4.0, -2.0, 0.0]);
        assert_eq!(c.train_snr, TrainSnr::Uniform { lo: -6.0, hi: 4.0 });
        assert_eq!(c.channel.max_memory, 8);
        assert_eq!(c.output.as_deref(), Some(Path::new("x.csv")));
    }

    #[test]
    fn seed_is_required_for_experiments() {
        assert!(Cli::try_parse_from(["mmwdet", "sweep"]).is_err());
        assert!(Cli::try_parse_from(["mmwdet", "runtime", "--seed", "1"]).is_ok());
    }
}
