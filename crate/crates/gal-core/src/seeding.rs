//! Named, derived RNG streams.
//!
//! Every source of randomness in a run is its own stream, derived from a base
//! seed, a label, and a worker index. Consuming one stream never shifts
//! another, which is what makes the degenerate-run equivalences exact.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a stream seed from a base seed, a stream label, and an index.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label, folded with the base, then splitmix-finalized.
    let mut h = 0xcbf2_9ce4_8422_2325_u64 ^ splitmix64(base);
    for b in label.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(h) ^ index)
}

/// A deterministic generator for the given derived seed.
pub fn stream_rng(base: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, label, index))
}
