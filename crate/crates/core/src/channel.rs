//! Statistical clustered multipath channel model.
//!
//! A realization is drawn in two stages. [`sample_clusters`] draws the sparse
//! time-cluster structure (cluster count, subpaths, gains, phases, delays) and
//! [`render_taps`] samples it at the symbol rate through the pulse shape:
//!
//! ```text
//! H[l]_n = sum_c sum_m a_{m,c,n} exp(j phi_{m,c,n}) p(l Ts - tau_{m,c,n})
//! ```
//!
//! followed by a normalization to unit average per-antenna energy.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};

use crate::error::{bail, Result};
use crate::math;

/// Hard cap on the number of time clusters.
pub const MAX_CLUSTERS: usize = 6;

/// Pulse support, in symbol periods on each side of the peak.
pub const PULSE_SPAN: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelConfig {
    pub num_antennas: usize,
    /// Signal bandwidth in Hz; the symbol period is its reciprocal.
    pub bandwidth_hz: f64,
    /// Number of taps `T` kept after rendering.
    pub max_memory: usize,
    /// Mean of the Poisson draw for clusters beyond the first.
    pub mean_extra_clusters: f64,
    /// Mean of the Poisson draw for subpaths beyond the first in each cluster.
    pub mean_extra_subpaths: f64,
    /// Scale (mean) of the exponential inter-cluster arrival delay, seconds.
    pub cluster_delay_scale: f64,
    /// Scale of the exponential intra-cluster subpath delay, seconds.
    pub subpath_delay_scale: f64,
    /// Cluster power decays as `exp(-tau / power_decay)`, seconds.
    pub power_decay: f64,
    /// Raised-cosine roll-off factor in `[0, 1]`.
    pub rolloff: f64,
    /// Carrier frequency, recorded as scenario metadata only.
    pub carrier_hz: f64,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            num_antennas: 4,
            bandwidth_hz: 800e6,
            max_memory: 64,
            mean_extra_clusters: 1.8,
            mean_extra_subpaths: 3.0,
            cluster_delay_scale: 12.5e-9,
            subpath_delay_scale: 2.5e-9,
            power_decay: 10e-9,
            rolloff: 0.25,
            carrier_hz: 28e9,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn symbol_period(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if self.num_antennas == 0 {
            bail!(Config, "num_antennas must be at least 1");
        }
        if self.max_memory == 0 {
            bail!(Config, "max_memory must be at least 1");
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            bail!(Config, "bandwidth must be positive, got {}", self.bandwidth_hz);
        }
        if !(self.power_decay.is_finite() && self.power_decay > 0.0) {
            bail!(Config, "power decay must be positive, got {}", self.power_decay);
        }
        for (name, v) in [
            ("mean_extra_clusters", self.mean_extra_clusters),
            ("mean_extra_subpaths", self.mean_extra_subpaths),
            ("cluster_delay_scale", self.cluster_delay_scale),
            ("subpath_delay_scale", self.subpath_delay_scale),
        ] {
            if !nonneg(v) {
                bail!(Config, "{name} must be finite and non-negative, got {v}");
            }
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            bail!(Config, "rolloff must lie in [0, 1], got {}", self.rolloff);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Subpath {
    /// Amplitude `a_{m,c,n}` for each receive antenna.
    pub gain_per_antenna: Vec<f64>,
    /// Phase `phi_{m,c,n}` in radians, `[0, 2pi)`.
    pub phase_per_antenna: Vec<f64>,
    /// Delay in seconds.
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cluster {
    pub subpaths: Vec<Subpath>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClusterSet {
    pub num_antennas: usize,
    pub clusters: Vec<Cluster>,
    /// Seed of the configuration that produced the set (provenance only).
    pub seed: u64,
}

impl ClusterSet {
    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            bail!(Domain, "cluster set is empty");
        }
        if self.clusters.len() > MAX_CLUSTERS {
            bail!(Domain, "{} clusters exceeds the cap of {MAX_CLUSTERS}", self.clusters.len());
        }
        for (c, cluster) in self.clusters.iter().enumerate() {
            if cluster.subpaths.is_empty() {
                bail!(Domain, "cluster {c} has no subpaths");
            }
            for sp in &cluster.subpaths {
                if sp.gain_per_antenna.len() != self.num_antennas
                    || sp.phase_per_antenna.len() != self.num_antennas
                {
                    bail!(Domain, "cluster {c}: subpath entries do not match {} antennas", self.num_antennas);
                }
                if !(sp.delay.is_finite() && sp.delay >= 0.0) {
                    bail!(Domain, "cluster {c}: invalid delay {}", sp.delay);
                }
                if sp.gain_per_antenna.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
                    bail!(Domain, "cluster {c}: gains must be finite and non-negative");
                }
                if sp
                    .phase_per_antenna
                    .iter()
                    .any(|p| !(p.is_finite() && (0.0..math::TAU).contains(p)))
                {
                    bail!(Domain, "cluster {c}: phases must lie in [0, 2pi)");
                }
            }
        }
        Ok(())
    }

    pub fn num_subpaths(&self) -> usize {
        self.clusters.iter().map(|c| c.subpaths.len()).sum()
    }

    pub fn subpaths(&self) -> impl Iterator<Item = &Subpath> {
        self.clusters.iter().flat_map(|c| c.subpaths.iter())
    }

    pub fn max_delay(&self) -> f64 {
        self.subpaths().map(|s| s.delay).fold(0.0, f64::max)
    }

    /// Multiplies every gain by `factor`.
    pub fn scale_gains(&mut self, factor: f64) {
        for cluster in &mut self.clusters {
            for sp in &mut cluster.subpaths {
                sp.gain_per_antenna.iter_mut().for_each(|g| *g *= factor);
            }
        }
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean == 0.0 {
        return 0;
    }
    // validated finite and positive
    let draw: f64 = Poisson::new(mean).unwrap().sample(rng);
    draw as usize
}

fn exponential<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    Exp::new(1.0 / scale).unwrap().sample(rng)
}

/// Draws a cluster/subpath structure.
///
/// Cluster count is `1 + min(5, Poisson)`, subpath count per cluster is
/// `1 + Poisson`. Cluster arrivals are exponential, subpaths add a smaller
/// exponential offset, and all delays are finally shifted so the earliest
/// subpath arrives at zero excess delay. Cluster power decays exponentially
/// with delay and is split among subpaths by normalized uniform fractions.
pub fn sample_clusters<R: Rng + ?Sized>(config: &ChannelConfig, rng: &mut R) -> Result<ClusterSet> {
    config.validate()?;
    let nr = config.num_antennas;
    let num_clusters = 1 + poisson(config.mean_extra_clusters, rng).min(MAX_CLUSTERS - 1);

    let mut clusters = Vec::with_capacity(num_clusters);
    let mut cluster_delay = 0.0;
    for c in 0..num_clusters {
        if c > 0 {
            cluster_delay += exponential(config.cluster_delay_scale, rng);
        }
        let power = math::exp(-cluster_delay / config.power_decay);
        let num_subpaths = 1 + poisson(config.mean_extra_subpaths, rng);
        let fractions: Vec<f64> = (0..num_subpaths).map(|_| rng.random::<f64>() + f64::EPSILON).collect();
        let total: f64 = fractions.iter().sum();

        let subpaths = fractions
            .iter()
            .map(|f| {
                let delay = cluster_delay + exponential(config.subpath_delay_scale, rng);
                let amplitude = math::sqrt(power * f / total);
                let phase_per_antenna = (0..nr).map(|_| rng.random::<f64>() * math::TAU).collect();
                Subpath {
                    gain_per_antenna: alloc::vec![amplitude; nr],
                    phase_per_antenna,
                    delay,
                }
            })
            .collect();
        clusters.push(Cluster { subpaths });
    }

    let mut set = ClusterSet { num_antennas: nr, clusters, seed: config.seed };
    let first = set.subpaths().map(|s| s.delay).fold(f64::INFINITY, f64::min);
    for cluster in &mut set.clusters {
        for sp in &mut cluster.subpaths {
            sp.delay = (sp.delay - first).max(0.0);
        }
    }
    Ok(set)
}

/// Raised-cosine pulse truncated to `|t| <= 4 Ts`.
pub fn pulse(t: f64, symbol_period: f64, rolloff: f64) -> f64 {
    let x = t / symbol_period;
    if math::fabs(x) > PULSE_SPAN {
        return 0.0;
    }
    if x == 0.0 {
        return 1.0;
    }
    let sinc = math::sin(math::PI * x) / (math::PI * x);
    let bx = 2.0 * rolloff * x;
    let denom = 1.0 - bx * bx;
    if math::fabs(denom) < 1e-12 {
        // limit at |t| = Ts / (2 beta)
        let half = 1.0 / (2.0 * rolloff);
        return math::PI / 4.0 * math::sin(math::PI * half) / (math::PI * half);
    }
    sinc * math::cos(math::PI * rolloff * x) / denom
}

/// Discrete-time channel taps `H[0..T]` for `Nr` antennas.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelRealization {
    /// Row-major `memory x num_antennas`.
    taps: Vec<Complex64>,
    num_antennas: usize,
    memory: usize,
    symbol_period: f64,
    /// Factor applied to the raw rendered taps.
    normalization: f64,
    seed: u64,
    /// Set when some subpath's pulse extends past the last kept tap.
    truncated: bool,
}

impl ChannelRealization {
    /// Builds a realization from explicit taps (row-major `memory x num_antennas`).
    pub fn from_taps(taps: Vec<Complex64>, memory: usize, num_antennas: usize, symbol_period: f64) -> Result<Self> {
        if memory == 0 || num_antennas == 0 {
            bail!(Domain, "memory and antenna count must be at least 1");
        }
        if taps.len() != memory * num_antennas {
            bail!(Domain, "expected {} taps, got {}", memory * num_antennas, taps.len());
        }
        if taps.iter().any(|t| !(t.re.is_finite() && t.im.is_finite())) {
            bail!(Domain, "taps must be finite");
        }
        Ok(Self { taps, num_antennas, memory, symbol_period, normalization: 1.0, seed: 0, truncated: false })
    }

    pub fn with_provenance(mut self, normalization: f64, seed: u64, truncated: bool) -> Self {
        self.normalization = normalization;
        self.seed = seed;
        self.truncated = truncated;
        self
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn symbol_period(&self) -> f64 {
        self.symbol_period
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    /// Tap vector `H[l]` across antennas.
    #[inline]
    pub fn tap(&self, l: usize) -> &[Complex64] {
        &self.taps[l * self.num_antennas..(l + 1) * self.num_antennas]
    }

    /// `sum_l |H[l]_n|^2` averaged over antennas.
    pub fn energy_per_antenna(&self) -> f64 {
        self.taps.iter().map(|t| t.norm_sqr()).sum::<f64>() / self.num_antennas as f64
    }

    /// Fraction of channel energy in each tap, summed over antennas.
    pub fn power_delay_profile(&self) -> Vec<f64> {
        let total: f64 = self.taps.iter().map(|t| t.norm_sqr()).sum();
        (0..self.memory)
            .map(|l| self.tap(l).iter().map(|t| t.norm_sqr()).sum::<f64>() / total)
            .collect()
    }
}

/// Evaluates the tap sum without normalization. Returns the taps and the
/// truncation flag.
pub fn render_raw_taps(clusters: &ClusterSet, config: &ChannelConfig) -> Result<(Vec<Complex64>, bool)> {
    config.validate()?;
    clusters.validate()?;
    if clusters.num_antennas != config.num_antennas {
        bail!(Domain, "cluster set has {} antennas, config {}", clusters.num_antennas, config.num_antennas);
    }
    let ts = config.symbol_period();
    let nr = config.num_antennas;
    let memory = config.max_memory;
    let mut taps = alloc::vec![Complex64::new(0.0, 0.0); memory * nr];
    let last_tap = (memory - 1) as f64 * ts;

    let mut truncated = false;
    for sp in clusters.subpaths() {
        if sp.delay + PULSE_SPAN * ts > last_tap + 1e-6 * ts {
            truncated = true;
        }
        let rotors: Vec<Complex64> = sp
            .gain_per_antenna
            .iter()
            .zip(&sp.phase_per_antenna)
            .map(|(&a, &phi)| Complex64::new(a * math::cos(phi), a * math::sin(phi)))
            .collect();
        for l in 0..memory {
            let p = pulse(l as f64 * ts - sp.delay, ts, config.rolloff);
            if p == 0.0 {
                continue;
            }
            for (t, r) in taps[l * nr..(l + 1) * nr].iter_mut().zip(&rotors) {
                *t += r * p;
            }
        }
    }
    Ok((taps, truncated))
}

/// Renders and normalizes to unit average per-antenna energy.
pub fn render_taps(clusters: &ClusterSet, config: &ChannelConfig) -> Result<ChannelRealization> {
    let (taps, truncated) = render_raw_taps(clusters, config)?;
    let energy = taps.iter().map(|t| t.norm_sqr()).sum::<f64>() / config.num_antennas as f64;
    if !(energy > 0.0 && energy.is_finite()) {
        bail!(Domain, "rendered channel has no energy");
    }
    render_with_factor(taps, truncated, 1.0 / math::sqrt(energy), clusters, config)
}

/// Renders with a caller-supplied scale instead of normalizing, e.g. to
/// express a perturbed cluster set relative to its nominal channel.
pub fn render_taps_scaled(clusters: &ClusterSet, config: &ChannelConfig, factor: f64) -> Result<ChannelRealization> {
    let (taps, truncated) = render_raw_taps(clusters, config)?;
    render_with_factor(taps, truncated, factor, clusters, config)
}

fn render_with_factor(
    mut taps: Vec<Complex64>,
    truncated: bool,
    factor: f64,
    clusters: &ClusterSet,
    config: &ChannelConfig,
) -> Result<ChannelRealization> {
    taps.iter_mut().for_each(|t| *t *= factor);
    Ok(ChannelRealization::from_taps(taps, config.max_memory, config.num_antennas, config.symbol_period())?
        .with_provenance(factor, clusters.seed, truncated))
}

/// Draws and renders one realization using `config.seed`.
pub fn generate(config: &ChannelConfig) -> Result<(ClusterSet, ChannelRealization)> {
    let mut rng = crate::seed::rng(config.seed);
    let clusters = sample_clusters(config, &mut rng)?;
    let channel = render_taps(&clusters, config)?;
    Ok((clusters, channel))
}

/// Multiplies every gain by `1 + delta`, `delta ~ N(0, (level sqrt(pi/2))^2)`
/// so that `E|delta| = level`. Gains are clamped at zero; phases and delays
/// are untouched.
pub fn perturb_amplitudes<R: Rng + ?Sized>(clusters: &ClusterSet, level: f64, rng: &mut R) -> Result<ClusterSet> {
    if !(level.is_finite() && level >= 0.0) {
        bail!(Config, "distortion level must be finite and non-negative, got {level}");
    }
    let mut out = clusters.clone();
    if level == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, level * math::sqrt(math::PI / 2.0)).unwrap();
    for cluster in &mut out.clusters {
        for sp in &mut cluster.subpaths {
            for g in &mut sp.gain_per_antenna {
                let delta: f64 = normal.sample(rng);
                *g = (*g * (1.0 + delta)).max(0.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use alloc::vec;

    fn one_path(gain: f64, phase: f64, delay: f64, nr: usize) -> ClusterSet {
        ClusterSet {
            num_antennas: nr,
            clusters: vec![Cluster {
                subpaths: vec![Subpath {
                    gain_per_antenna: vec![gain; nr],
                    phase_per_antenna: vec![phase; nr],
                    delay,
                }],
            }],
            seed: 0,
        }
    }

    #[test]
    fn degenerate_config_gives_single_path_at_zero() {
        let config = ChannelConfig {
            mean_extra_clusters: 0.0,
            mean_extra_subpaths: 0.0,
            cluster_delay_scale: 0.0,
            subpath_delay_scale: 0.0,
            ..Default::default()
        };
        let set = sample_clusters(&config, &mut seed::rng(3)).unwrap();
        assert_eq!(set.clusters.len(), 1);
        assert_eq!(set.clusters[0].subpaths.len(), 1);
        assert_eq!(set.clusters[0].subpaths[0].delay, 0.0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let config = ChannelConfig::default();
        let a = sample_clusters(&config, &mut seed::rng(11)).unwrap();
        let b = sample_clusters(&config, &mut seed::rng(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cluster_count_statistics() {
        let config = ChannelConfig::default();
        let mut rng = seed::rng(5);
        let n = 10_000;
        let mut total = 0usize;
        for _ in 0..n {
            let set = sample_clusters(&config, &mut rng).unwrap();
            assert!(set.clusters.len() <= MAX_CLUSTERS);
            set.validate().unwrap();
            total += set.clusters.len();
        }
        // E[1 + min(5, Poisson(1.8))], computed from the truncated pmf
        let mut expected = 1.0;
        let mut pmf = math::exp(-1.8);
        for k in 0..=50usize {
            if k > 0 {
                pmf *= 1.8 / k as f64;
            }
            expected += pmf * k.min(5) as f64;
        }
        let mean = total as f64 / n as f64;
        assert!((mean - expected).abs() < 0.1 * expected, "mean {mean} vs {expected}");
        // the configured mean 1 + mu_C sits within 10% as well
        assert!((mean - 2.8).abs() < 0.28);
    }

    #[test]
    fn invalid_config_rejected() {
        for config in [
            ChannelConfig { power_decay: 0.0, ..Default::default() },
            ChannelConfig { cluster_delay_scale: -1.0, ..Default::default() },
            ChannelConfig { max_memory: 0, ..Default::default() },
            ChannelConfig { bandwidth_hz: f64::NAN, ..Default::default() },
        ] {
            assert!(matches!(sample_clusters(&config, &mut seed::rng(0)), Err(crate::Error::Config(_))));
        }
    }

    #[test]
    fn pulse_values() {
        let ts = 1.25e-9;
        assert_eq!(pulse(0.0, ts, 0.25), 1.0);
        for k in [1, 2, 3, -1, -3] {
            assert!(pulse(k as f64 * ts, ts, 0.25).abs() < 1e-15);
        }
        // direct closed form at t = Ts/2: sinc(1/2) cos(pi/8) / (1 - 1/16)
        let expected = (2.0 / core::f64::consts::PI) * (core::f64::consts::PI / 8.0).cos() / 0.9375;
        assert!((pulse(ts / 2.0, ts, 0.25) - expected).abs() < 1e-14);
        assert_eq!(pulse(4.5 * ts, ts, 0.25), 0.0);
        // removable singularity at t = Ts / (2 beta) = 2 Ts
        let near = pulse(2.0 * ts * (1.0 + 1e-9), ts, 0.25);
        assert!((pulse(2.0 * ts, ts, 0.25) - near).abs() < 1e-6);
    }

    #[test]
    fn single_subpath_taps() {
        let config = ChannelConfig { num_antennas: 2, max_memory: 8, ..Default::default() };
        let ts = config.symbol_period();
        let (taps, _) = render_raw_taps(&one_path(1.0, 0.0, 0.0, 2), &config).unwrap();
        for n in 0..2 {
            assert!((taps[n] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
            for l in 1..8 {
                assert!(taps[l * 2 + n].norm() < 1e-15);
            }
        }
        let (taps, _) = render_raw_taps(&one_path(0.5, math::PI / 2.0, ts, 2), &config).unwrap();
        assert!((taps[2] - Complex64::new(0.0, 0.5)).norm() < 1e-15);
        assert!(taps[0].norm() < 1e-15);
    }

    #[test]
    fn empty_cluster_set_is_domain_error() {
        let config = ChannelConfig::default();
        let set = ClusterSet { num_antennas: 4, clusters: vec![], seed: 0 };
        assert!(matches!(render_taps(&set, &config), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn truncation_flag() {
        let config = ChannelConfig { num_antennas: 1, max_memory: 8, ..Default::default() };
        let ts = config.symbol_period();
        assert!(!render_taps(&one_path(1.0, 0.0, 3.0 * ts, 1), &config).unwrap().truncated());
        assert!(render_taps(&one_path(1.0, 0.0, 3.5 * ts, 1), &config).unwrap().truncated());
    }

    #[test]
    fn rendering_is_linear_in_gains() {
        let config = ChannelConfig::default();
        let set = sample_clusters(&config, &mut seed::rng(9)).unwrap();
        let mut doubled = set.clone();
        doubled.scale_gains(2.0);
        let (a, _) = render_raw_taps(&set, &config).unwrap();
        let (b, _) = render_raw_taps(&doubled, &config).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x * 2.0 - y).norm() <= 1e-12 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn normalized_energy() {
        for s in 0..20 {
            let config = ChannelConfig { seed: s, ..Default::default() };
            let (_, ch) = generate(&config).unwrap();
            assert!((ch.energy_per_antenna() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let config = ChannelConfig::default();
        let set = sample_clusters(&config, &mut seed::rng(2)).unwrap();
        assert_eq!(perturb_amplitudes(&set, 0.0, &mut seed::rng(1)).unwrap(), set);
        assert!(perturb_amplitudes(&set, -0.1, &mut seed::rng(1)).is_err());
    }

    #[test]
    fn perturbation_statistics() {
        let config = ChannelConfig { num_antennas: 100, mean_extra_subpaths: 9.0, ..Default::default() };
        let mut rng = seed::rng(4);
        let mut deltas = Vec::new();
        while deltas.len() < 100_000 {
            let set = sample_clusters(&config, &mut rng).unwrap();
            let out = perturb_amplitudes(&set, 0.025, &mut rng).unwrap();
            for (a, b) in set.subpaths().zip(out.subpaths()) {
                assert_eq!(a.delay.to_bits(), b.delay.to_bits());
                assert_eq!(a.phase_per_antenna, b.phase_per_antenna);
                for (ga, gb) in a.gain_per_antenna.iter().zip(&b.gain_per_antenna) {
                    deltas.push(gb / ga - 1.0);
                }
            }
        }
        let n = deltas.len() as f64;
        let mean_abs = deltas.iter().map(|d| d.abs()).sum::<f64>() / n;
        assert!((mean_abs - 0.025).abs() < 0.02 * 0.025, "mean |delta| = {mean_abs}");
        let mean = deltas.iter().sum::<f64>() / n;
        let sigma = 0.025 * (core::f64::consts::PI / 2.0).sqrt();
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean delta = {mean}");
    }
}
