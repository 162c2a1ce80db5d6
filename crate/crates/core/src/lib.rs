//! Physical-layer simulation and symbol detection for long-memory mmWave
//! SIMO uplinks.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! parts: channel generation, the transmit model, a small LSTM substrate,
//! the sliding bidirectional detector and the model-based sequence
//! detectors. File formats, timing and the experiment CLI live in the
//! `mmwdet-harness` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod channel;
mod error;
pub mod math;
pub mod modem;
pub mod nn;
pub mod sbrnn;
pub mod seed;
pub mod viterbi;

pub use error::{Error, Result};
pub use num_complex::Complex64;
