//! Seed derivation for reproducible, decorrelated RNG substreams.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Derives an independent substream seed from a root seed and a stream index
/// (SplitMix64 finalizer). Streams for distinct indices are decorrelated, and
/// appending new indices never perturbs existing ones.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded generator with a stable, portable stream.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
