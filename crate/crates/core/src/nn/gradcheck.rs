use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// A check passes when the largest relative error is below this.
    pub tolerance: f64,
    /// Denominator floor so near-zero gradients are compared absolutely.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, abs_floor: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index where the largest error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `loss` at `params`
/// for the coordinates in `coords`. The relative error of one coordinate is
/// `|a - n| / max(|a|, |n|, abs_floor)`.
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    coords: &[usize],
    config: &GradCheckConfig,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
        passed: false,
    };
    for &k in coords {
        let orig = work[k];
        work[k] = orig + config.step;
        let up = loss(&work);
        work[k] = orig - config.step;
        let down = loss(&work);
        work[k] = orig;
        let numeric = (up - down) / (2.0 * config.step);
        let a = analytic[k];
        let denom = a.abs().max(numeric.abs()).max(config.abs_floor);
        let rel = (a - numeric).abs() / denom;
        if !(rel <= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = k;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error < config.tolerance;
    report
}

/// `count` distinct coordinates out of `n`, in ascending order.
pub fn sample_coords<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<usize> {
    let mut v = index::sample(rng, n, count.min(n)).into_vec();
    v.sort_unstable();
    v
}
