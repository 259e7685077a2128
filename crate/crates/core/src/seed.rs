//! Deterministic seed derivation.
//!
//! Every random stream in the crate is keyed by `(base seed, purpose,
//! index)` so that work can be reordered or parallelized without changing
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
pub mod purpose {
    pub const RENDER_NOISE: u64 = 0x6e6f_6973_6500_0002;
    pub const INIT: u64 = 0x696e_6974_0000_0003;
    pub const SHUFFLE: u64 = 0x7368_7566_0000_0004;
    pub const LATENT: u64 = 0x6c61_7465_6e74_0005;
    pub const QUERY: u64 = 0x7175_6572_7900_0006;
    pub const SAMPLING: u64 = 0x7361_6d70_0000_0007;
    pub const RUN: u64 = 0x7275_6e00_0000_0008;
}

/// XOR mask separating the test split's seed from the training seed.
pub const TEST_SPLIT_MASK: u64 = 0x5DEE_CE66_D1CE_5EED;

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(base: u64, purpose: u64, index: u64) -> u64 {
    mix(mix(base ^ purpose).wrapping_add(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
