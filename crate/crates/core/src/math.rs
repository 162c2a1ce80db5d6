//! Scalar helpers backed by `libm` so results do not depend on the host libm.

pub use libm::{cos, exp, fabs, log, log10, pow, sin, sqrt, tanh};

pub const PI: f64 = core::f64::consts::PI;
pub const TAU: f64 = core::f64::consts::TAU;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -libm::log1p(exp(-x))
    } else {
        x - libm::log1p(exp(x))
    }
}

/// Converts decibels to a linear power ratio.
#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    pow(10.0, db / 10.0)
}

#[inline]
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * log10(x)
}

const LOG2E: f64 = core::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const ROUND_SHIFT: f64 = 6_755_399_441_055_744.0;
/// `1 / k!` for `k = 13, 12, ..., 0`.
const EXP_POLY: [f64; 14] = [
    1.0 / 6_227_020_800.0,
    1.0 / 479_001_600.0,
    1.0 / 39_916_800.0,
    1.0 / 3_628_800.0,
    1.0 / 362_880.0,
    1.0 / 40_320.0,
    1.0 / 5_040.0,
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    0.5,
    1.0,
    1.0,
];

/// Branch-free `exp` with inputs clamped to `[-708, 709]`; the slice
/// versions below vectorize.
#[inline(always)]
pub fn exp_clamped(x: f64) -> f64 {
    let x = x.clamp(-708.0, 709.0);
    let shifted = x * LOG2E + ROUND_SHIFT;
    let k = shifted - ROUND_SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = EXP_POLY[0];
    for &c in &EXP_POLY[1..] {
        p = p * r + c;
    }
    // the low mantissa bits of `shifted` hold k in two's complement
    p * f64::from_bits(shifted.to_bits().wrapping_add(1023) << 52)
}

/// In-place logistic function.
pub fn sigmoid_slice(xs: &mut [f64]) {
    for x in xs {
        *x = 1.0 / (1.0 + exp_clamped(-*x));
    }
}

/// In-place hyperbolic tangent.
pub fn tanh_slice(xs: &mut [f64]) {
    for x in xs {
        *x = 2.0 / (1.0 + exp_clamped(-2.0 * *x)) - 1.0;
    }
}
