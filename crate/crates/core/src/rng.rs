//! Deterministic random-number substreams.
//!
//! Every stochastic step draws from its own ChaCha8 stream whose seed is a
//! mix of the user seed and a tag path such as `(role, replicate, area)`.
//! Streams never depend on thread scheduling, so parallel and sequential
//! runs produce identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Distinct roles never share a substream.
pub mod role {
    pub const E_STEP: u64 = 1;
    pub const BOOT_EFFECTS: u64 = 2;
    pub const BOOT_SMALL: u64 = 3;
    pub const BOOT_BIG: u64 = 4;
    pub const BOOT_REFIT: u64 = 5;
    pub const SIM_EFFECTS: u64 = 6;
    pub const SIM_SMALL: u64 = 7;
    pub const SIM_BIG: u64 = 8;
    pub const SIM_SIZES: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed from a base seed and a tag path.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// RNG for the substream identified by `tags` under `seed`.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}
