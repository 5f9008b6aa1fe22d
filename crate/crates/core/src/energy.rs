//! Energy-harvesting models and the Monte Carlo coverage oracle.
//!
//! The effective gain of beam direction `nu` at a user with downlink `h` is
//! `|nu^H h|^2` everywhere in this crate.

use rayon::prelude::*;

use crate::channel::{complex_gaussian, downlink_into};
use crate::rng::{derived_rng, stream};
use crate::scenario::EhCircuitParams;
use crate::{CVector, Error, Result, C64};

/// A transmit beam `w = sqrt(power) * direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    pub power: f64,
    pub direction: CVector,
}

/// Input, harvested energy and split for one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EhEvaluation {
    pub input_energy: f64,
    pub harvested: f64,
    pub split: f64,
}

#[inline]
pub fn effective_gain(nu: &CVector, h: &CVector) -> f64 {
    nu.dotc(h).norm_sqr()
}

/// RF power reaching the harvester; receiver noise is ignored.
pub fn input_energy(h: &CVector, beams: &[Beam], rho: f64) -> f64 {
    (1.0 - rho) * beams.iter().map(|b| b.power * effective_gain(&b.direction, h)).sum::<f64>()
}

pub fn evaluate(h: &CVector, beams: &[Beam], rho: f64, circuit: &EhCircuitParams) -> EhEvaluation {
    let e = input_energy(h, beams, rho);
    EhEvaluation { input_energy: e, harvested: eh_nonlinear(e, circuit), split: rho }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic harvester normalized so that zero input gives zero output.
pub fn eh_nonlinear(e_in: f64, circuit: &EhCircuitParams) -> f64 {
    let EhCircuitParams { m_eh, a, b } = *circuit;
    let offset = sigmoid(-a * b);
    m_eh * (sigmoid(a * (e_in - b)) - offset) / sigmoid(a * b)
}

pub fn eh_linear(e_in: f64, xi: f64) -> f64 {
    xi * e_in
}

/// Input energy needed to harvest exactly `theta`.
pub fn eh_threshold_inverse(theta: f64, circuit: &EhCircuitParams) -> Result<f64> {
    let EhCircuitParams { m_eh, a, b } = *circuit;
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("harvest target {theta} W must be positive")));
    }
    if theta >= m_eh {
        return Err(Error::Domain(format!("target at/above saturation ({theta} W >= {m_eh} W)")));
    }
    // ln((e^{ab} theta + M) / (M - theta)) / a, with e^{ab} factored out.
    let closed = b + ((theta + m_eh * (-a * b).exp()) / (m_eh - theta)).ln() / a;
    let back = eh_nonlinear(closed, circuit);
    if closed.is_finite() && ((back - theta) / theta).abs() <= 1e-9 {
        return Ok(closed);
    }
    Ok(bisect_inverse(theta, circuit))
}

fn bisect_inverse(theta: f64, circuit: &EhCircuitParams) -> f64 {
    let mut lo = 0.0;
    let mut hi = circuit.b.max(1e-12);
    while eh_nonlinear(hi, circuit) < theta {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eh_nonlinear(mid, circuit) < theta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Samples per Monte Carlo shard. Shards are seeded by index, so counts do
/// not depend on the thread pool.
pub const MC_SHARD: usize = 4096;

/// Monte Carlo harvest statistics of one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McHarvest {
    /// Fraction of draws meeting the target.
    pub coverage: f64,
    pub mean_harvested: f64,
}

/// Fraction of calibration-error draws for which the harvested energy of the
/// user with uplink `u` reaches `theta`.
#[allow(clippy::too_many_arguments)]
pub fn mc_coverage(
    u: &CVector,
    sigma_cal_sq: f64,
    beams: &[Beam],
    rho: f64,
    theta: f64,
    circuit: &EhCircuitParams,
    samples: usize,
    seed: u64,
) -> f64 {
    mc_harvest(u, sigma_cal_sq, beams, rho, theta, circuit, samples, seed).coverage
}

#[allow(clippy::too_many_arguments)]
pub fn mc_harvest(
    u: &CVector,
    sigma_cal_sq: f64,
    beams: &[Beam],
    rho: f64,
    theta: f64,
    circuit: &EhCircuitParams,
    samples: usize,
    seed: u64,
) -> McHarvest {
    let shards = samples.div_ceil(MC_SHARD);
    let per_shard: Vec<(usize, f64)> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let n = MC_SHARD.min(samples - s * MC_SHARD);
            let mut rng = derived_rng(seed, stream::MONTE_CARLO, s as u64);
            let mut c = vec![C64::from(0.0); u.len()];
            let mut h = CVector::zeros(u.len());
            let (mut hits, mut sum) = (0, 0.0);
            for _ in 0..n {
                for ci in c.iter_mut() {
                    *ci = complex_gaussian(&mut rng, sigma_cal_sq);
                }
                downlink_into(u, &c, &mut h);
                let e = eh_nonlinear(input_energy(&h, beams, rho), circuit);
                sum += e;
                if e >= theta {
                    hits += 1;
                }
            }
            (hits, sum)
        })
        .collect();
    // ordered reduction keeps the mean bit-stable across thread counts
    let hits: usize = per_shard.iter().map(|x| x.0).sum();
    let sum: f64 = per_shard.iter().map(|x| x.1).sum();
    McHarvest { coverage: hits as f64 / samples as f64, mean_harvested: sum / samples as f64 }
}
