//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by a tuple of integers
//! (master seed, epoch, sample index, node id, ...). The tuple is folded
//! through a SplitMix64 finalizer, so a stream never depends on how many
//! other streams were consumed before it. This is what lets row-parallel
//! sampling stay bitwise reproducible at any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines two words into one well-mixed word. Not symmetric.
#[inline]
pub fn mix(a: u64, b: u64) -> u64 {
    mix64(a.wrapping_add(GOLDEN_GAMMA) ^ mix64(b.wrapping_add(GOLDEN_GAMMA.rotate_left(17))))
}

/// Folds a key path into a single seed rooted at `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(master), |acc, &part| mix(acc, part))
}

/// A ChaCha8 generator for the stream identified by `(master, path...)`.
pub fn stream_rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
