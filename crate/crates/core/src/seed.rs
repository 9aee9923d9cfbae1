//! Hierarchical seed derivation.
//!
//! Every random draw in a sweep is addressed by `(master_seed, N, trial,
//! stream)`. The first three are folded into a 64-bit trial seed with a
//! SplitMix64-style finaliser; the trial seed keys a ChaCha8 generator and
//! the stream index selects one of its 2^64 independent streams:
//!
//! * stream `i` (`0 <= i < N`) drives particle `i`,
//! * stream `N` drives the shared observation path.
//!
//! Results are reproducible within this implementation; other generator
//! families will produce different (but statistically equivalent) numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold one more label into a seed.
#[inline]
pub fn derive(seed: u64, label: u64) -> u64 {
    mix64(seed.wrapping_add(GOLDEN) ^ mix64(label.wrapping_add(GOLDEN.rotate_left(17))))
}

/// Seed of one trial of a sweep; depends only on its three arguments.
pub fn trial_seed(master: u64, particles: usize, trial: usize) -> u64 {
    derive(derive(master, particles as u64), trial as u64)
}

/// Generator for one stream of a seed.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
