use std::collections::HashMap;

use mmwdet::config::{ExperimentConfig, ExperimentKind, TrainSnr};
use mmwdet::experiments::*;
use mmwdet::records::SerRecord;

/// A configuration small enough for debug-speed tests.
fn tiny(kind: ExperimentKind, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind, seed);
    c.num_antennas = 2;
    c.snr_grid = vec![-2.0, 4.0];
    c.num_channels = 2;
    c.symbols_per_channel = 120;
    c.block_length = 20;
    c.train_blocks = 40;
    c.beam_width = 8;
    c.window = 5;
    c.hidden_size = 4;
    c.channel.max_memory = 4;
    c.training.epochs = 2;
    c.training.windows_per_block = 2;
    c.convergence.num_channels = 3;
    c.convergence.eval_interval = 10;
    c.convergence.max_samples = 60;
    c.runtime.antenna_counts = vec![2, 6];
    c.runtime.blocks = 6;
    c.runtime.warmup_blocks = 1;
    c.runtime.groups = 3;
    c
}

fn untimed(rows: &[SerRecord]) -> Vec<SerRecord> {
    rows.iter().map(SerRecord::without_timing).collect()
}

#[test]
fn sweep_emits_every_cell_and_replays() {
    let c = tiny(ExperimentKind::Sweep, 7);
    let rows = run_ser_sweep(&c).unwrap();
    assert_eq!(rows.len(), 3 * c.snr_grid.len() * c.num_channels);
    for r in &rows {
        assert_eq!(r.status, "ok");
        assert_eq!(r.symbols, (c.eval_blocks() * c.block_length) as u64);
        assert_eq!(r.ser, r.errors as f64 / r.symbols as f64);
        assert!((0.0..=1.0).contains(&r.ser) && r.ci_low <= r.ser && r.ser <= r.ci_high);
        assert_eq!((r.seed, r.config_hash.as_str()), (7, c.hash().as_str()));
        assert_eq!(r.train_snr, "matched");
    }
    let mut by_cell: HashMap<(usize, u64), Vec<&SerRecord>> = HashMap::new();
    for r in &rows {
        by_cell.entry((r.channel, r.snr_db.to_bits())).or_default().push(r);
    }
    for cell in by_cell.values() {
        let ids: Vec<&str> = cell.iter().map(|r| r.detector.as_str()).collect();
        assert_eq!(ids, [SBRNN, VITERBI_FULL, VITERBI_CUT]);
        assert!(cell.iter().all(|r| r.samples_hash == cell[0].samples_hash));
    }
    assert_eq!(untimed(&run_ser_sweep(&c).unwrap()), untimed(&rows));
    let other = run_ser_sweep(&tiny(ExperimentKind::Sweep, 8)).unwrap();
    assert_ne!(other[0].samples_hash, rows[0].samples_hash);
}

#[test]
fn model_cache_reproduces_trained_models() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(ExperimentKind::Sweep, 3);
    c.num_channels = 1;
    c.train_snr = TrainSnr::Uniform { lo: -4.0, hi: 4.0 };
    let plain = run_ser_sweep(&c).unwrap();
    c.model_cache = Some(dir.path().to_path_buf());
    let first = run_ser_sweep(&c).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let second = run_ser_sweep(&c).unwrap();
    assert_eq!(untimed(&first), untimed(&plain));
    assert_eq!(untimed(&second), untimed(&plain));
}

#[test]
fn robustness_without_distortion_reduces_to_the_sweep() {
    let mut sweep = tiny(ExperimentKind::Sweep, 5);
    sweep.train_snr = TrainSnr::Fixed(0.0);
    let mut rob = sweep.clone();
    rob.kind = ExperimentKind::Robustness;
    rob.distortion = 0.0;
    let s = run_ser_sweep(&sweep).unwrap();
    let r = run_csi_robustness(&rob).unwrap();
    assert_eq!(r.len(), s.len());
    for (a, b) in r.chunks(3).zip(s.chunks(3)) {
        let full = &b[1];
        assert_eq!((a[0].errors, a[0].samples_hash.as_str()), (b[0].errors, b[0].samples_hash.as_str()));
        assert_eq!(a[1].detector, VITERBI_MISMATCHED);
        assert_eq!(a[2].detector, VITERBI_PERFECT);
        assert_eq!(a[1].errors, full.errors);
        assert_eq!(a[2].errors, full.errors);
    }
}

#[test]
fn distorted_robustness_has_all_rows() {
    let c = tiny(ExperimentKind::Robustness, 5);
    assert_eq!(c.distortion, 0.025);
    let rows = run_csi_robustness(&c).unwrap();
    for snr in &c.snr_grid {
        for ch in 0..c.num_channels {
            let ids: Vec<&str> =
                rows.iter().filter(|r| r.snr_db == *snr && r.channel == ch).map(|r| r.detector.as_str()).collect();
            assert_eq!(ids, [SBRNN, VITERBI_MISMATCHED, VITERBI_PERFECT]);
        }
    }
    // perturbed blocks differ from the nominal evaluation set
    let mut nominal = c.clone();
    nominal.distortion = 0.0;
    let r0 = run_csi_robustness(&nominal).unwrap();
    assert_ne!(r0[0].samples_hash, rows[0].samples_hash);
}

#[test]
fn convergence_pairs_are_sorted_by_warm_count() {
    let c = tiny(ExperimentKind::Convergence, 2);
    let rows = run_convergence_study(&c).unwrap();
    assert_eq!(rows.len(), c.convergence.num_channels - 1);
    let key = |r: &mmwdet::records::ConvergenceRecord| r.warm_samples.unwrap_or(usize::MAX);
    assert!(rows.windows(2).all(|w| key(&w[0]) <= key(&w[1])));
    assert!(rows.iter().enumerate().all(|(i, r)| r.rank == i));
    let mut channels: Vec<usize> = rows.iter().map(|r| r.channel).collect();
    channels.sort();
    assert_eq!(channels, vec![0, 1]);
}

/// A freshly initialized detector sits at chance. A warm start carries no
/// such guarantee: the base channel's phase can make its decisions worse
/// than chance on a new realization.
#[test]
fn chance_threshold_is_reached_within_one_interval() {
    let mut c = tiny(ExperimentKind::Convergence, 4);
    c.convergence.threshold = 0.5;
    for r in run_convergence_study(&c).unwrap() {
        assert!(r.scratch_samples.is_some_and(|s| s <= c.convergence.eval_interval), "{r:?}");
    }
}

#[test]
fn runtime_rows_cover_each_antenna_count() {
    let c = tiny(ExperimentKind::Runtime, 1);
    let rows = run_runtime_benchmark(&c).unwrap();
    assert_eq!(rows.len(), 3 * c.runtime.antenna_counts.len());
    for (nr, chunk) in c.runtime.antenna_counts.iter().zip(rows.chunks(3)) {
        let ids: Vec<&str> = chunk.iter().map(|r| r.detector.as_str()).collect();
        assert_eq!(ids, [NOOP, SBRNN, VITERBI_FULL]);
        assert!(chunk.iter().all(|r| r.num_antennas == *nr && r.blocks == c.runtime.blocks));
        assert_eq!(chunk[2].speedup_vs_viterbi, 1.0);
        // the calibration row bounds harness overhead
        assert!(chunk[0].median_of_means_s < 1e-4 && chunk[0].median_of_means_s < chunk[1].median_of_means_s);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = tiny(ExperimentKind::Sweep, 1);
    c.snr_grid.clear();
    assert!(run_ser_sweep(&c).is_err());
    let mut c = tiny(ExperimentKind::Sweep, 1);
    c.num_channels = 0;
    assert!(run_ser_sweep(&c).is_err());
}
