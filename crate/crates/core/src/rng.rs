//! Deterministic seeding.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `derive_seed(root, stream, index)`. `stream` separates purposes (uplink
//! geometry, calibration errors, mobility drift, ...), `index` counts
//! realizations or Monte Carlo shards. Results never depend on the number of
//! worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tags for [`derive_seed`].
pub mod stream {
    pub const UPLINK: u64 = 1;
    pub const CALIBRATION: u64 = 2;
    pub const MONTE_CARLO: u64 = 3;
    pub const MOBILITY: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const REALIZATION: u64 = 6;
    pub const MC_TUNE: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed with a purpose tag and a counter.
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ splitmix64(stream)).wrapping_add(index))
}

pub fn rng_from(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, stream: u64, index: u64) -> SimRng {
    rng_from(derive_seed(root, stream, index))
}
