//! Resource allocation for multi-user SWIPT downlinks under imperfect TDD
//! channel reciprocity and a non-linear energy-harvesting model.
//!
//! The engine is organized as a three-stage pipeline:
//!
//! 1. [`plan`] redesigns the per-user coverage-probability targets (the
//!    serving plan) with a weighted-sum QP solved through its dual by
//!    multiplicative updates.
//! 2. [`beamform`] picks beam directions that maximize the average
//!    signal-to-leakage ratio over the calibration-error distribution.
//! 3. [`power`] allocates beam powers and power-splitting factors, either by
//!    a barrier interior-point method (per-user splits) or by the closed-form
//!    shared-split solution.
//!
//! [`moments`] and [`energy`] provide the closed-form statistics and the
//! harvesting models the allocation is built on; [`harness`] runs the Monte
//! Carlo studies that validate the guarantees.

pub mod beamform;
pub mod channel;
pub mod energy;
mod error;
pub mod harness;
pub mod moments;
pub mod plan;
pub mod power;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};

use nalgebra::{Complex, DVector};

/// Complex baseband scalar.
pub type C64 = Complex<f64>;
/// Complex column vector (channels, beam directions).
pub type CVector = DVector<C64>;

/// Converts a linear power ratio to decibels.
pub fn lin_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Converts decibels to a linear power ratio.
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts watts to dBm.
pub fn watts_to_dbm(p: f64) -> f64 {
    10.0 * (p * 1000.0).log10()
}
