//! CSV result schemas. Each file starts with a `# mmwdet-<schema> v<N>`
//! comment line followed by a header row.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

pub const SER_SCHEMA: &str = "ser";
pub const CONVERGENCE_SCHEMA: &str = "convergence";
pub const RUNTIME_SCHEMA: &str = "runtime";
pub const HISTORY_SCHEMA: &str = "history";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerRecord {
    pub experiment: String,
    pub detector: String,
    pub train_snr: String,
    pub snr_db: f64,
    pub channel: usize,
    pub errors: u64,
    pub symbols: u64,
    pub ser: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub time_per_block_s: f64,
    /// Hash of the received samples the detector consumed.
    pub samples_hash: String,
    pub seed: u64,
    pub config_hash: String,
    /// `ok`, or a diagnostic when the cell could not be evaluated.
    pub status: String,
}

impl SerRecord {
    /// Columns that legitimately differ between replays.
    pub fn without_timing(&self) -> Self {
        Self { time_per_block_s: 0.0, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    /// Position after sorting by the warm-start count.
    pub rank: usize,
    pub channel: usize,
    /// Empty when the threshold was not reached within the sample budget.
    pub scratch_samples: Option<usize>,
    pub warm_samples: Option<usize>,
    pub threshold: f64,
    pub eval_interval: usize,
    pub max_samples: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRecord {
    pub detector: String,
    pub num_antennas: usize,
    pub blocks: usize,
    pub mean_time_per_block_s: f64,
    pub median_of_means_s: f64,
    /// Viterbi time over this detector's time at the same antenna count.
    pub speedup_vs_viterbi: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: Option<f64>,
    pub samples_seen: usize,
}

pub fn schema_line(schema: &str) -> String {
    format!("# mmwdet-{schema} v{SCHEMA_VERSION}")
}

pub fn write_csv<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut file = File::create(path).map_err(io_err(path))?;
    writeln!(file, "{}", schema_line(schema)).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`], checking the schema line.
pub fn read_csv<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>> {
    let mut reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(io_err(path))?;
    if first.trim_end() != schema_line(schema) {
        return Err(HarnessError::Format {
            path: path.to_path_buf(),
            message: format!("expected schema line `{}`, found `{}`", schema_line(schema), first.trim_end()),
        });
    }
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

/// Wilson score interval for `k` successes in `n` trials at `z` standard
/// deviations.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k as f64 == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// 95% two-sided normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Splits `samples` into `groups` contiguous groups and returns the median
/// of the group means.
pub fn median_of_means(samples: &[f64], groups: usize) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let groups = groups.clamp(1, samples.len());
    let mut means: Vec<f64> = (0..groups)
        .map(|g| {
            let lo = g * samples.len() / groups;
            let hi = (g + 1) * samples.len() / groups;
            samples[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let m = means.len();
    if m % 2 == 1 {
        means[m / 2]
    } else {
        0.5 * (means[m / 2 - 1] + means[m / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference_values() {
        // 5 errors in 100 trials: (0.02154, 0.11175)
        let (lo, hi) = wilson_interval(5, 100, Z95);
        assert!((lo - 0.021_543).abs() < 1e-5 && (hi - 0.111_752).abs() < 1e-5, "{lo} {hi}");
        let (lo, hi) = wilson_interval(0, 1000, Z95);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.003_826).abs() < 1e-5);
        assert_eq!(wilson_interval(0, 0, Z95), (0.0, 1.0));
    }

    #[test]
    fn median_of_group_means() {
        assert_eq!(median_of_means(&[1.0, 1.0, 100.0, 2.0, 2.0, 3.0], 3), 2.5);
        assert_eq!(median_of_means(&[4.0], 5), 4.0);
        assert_eq!(median_of_means(&[1.0, 3.0], 2), 2.0);
        assert!(median_of_means(&[], 2).is_nan());
    }
}
