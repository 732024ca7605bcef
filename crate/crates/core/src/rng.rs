//! Seed derivation for replication streams.
//!
//! Every replication draws from its own ChaCha stream whose seed is a pure
//! function of the master seed and the replication coordinates, so results
//! do not depend on scheduling order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream generator used by every sampler in the crate.
pub type DrawRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of coordinates into a master seed.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix64(master), |acc, &c| {
        mix64(acc.wrapping_add(GOLDEN).wrapping_add(mix64(c ^ GOLDEN)))
    })
}

/// Seed of replication `rep` in a cell sized `n`. Procedures share it, which
/// gives the paired design across procedures.
pub fn replication_seed(master: u64, n: usize, rep: usize) -> u64 {
    derive_seed(master, &[n as u64, rep as u64])
}

pub fn stream(seed: u64) -> DrawRng {
    DrawRng::seed_from_u64(seed)
}
