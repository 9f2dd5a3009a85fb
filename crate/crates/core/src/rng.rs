//! Hierarchical seeding: every random stream is derived from one root seed
//! through `(parent, stream id)` pairs, so any sample's randomness can be
//! regenerated without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Well-known stream ids under a root seed.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const VALIDATION: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const SKELETON: u64 = 7;
    pub const INFRARED: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of `parent` for stream `id`.
pub fn derive_seed(parent: u64, id: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ id.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Seed reached by following a path of stream ids from `root`.
pub fn derive_path(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(root, |s, &id| derive_seed(s, id))
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
