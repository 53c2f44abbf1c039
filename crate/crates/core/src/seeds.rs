//! Deterministic seed derivation.
//!
//! Sub-seeds are derived by folding tag words through a splitmix64 finalizer
//! rather than hashing with `DefaultHasher`, whose output is not guaranteed
//! stable across toolchain versions. Byte-identical reruns depend on this.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a base seed and a sequence of tag words.
pub(crate) fn mix(base: u64, parts: &[u64]) -> u64 {
    let mut z = splitmix64(base);
    for &p in parts {
        z = splitmix64(z ^ splitmix64(p));
    }
    z
}

/// Seeded RNG with platform-stable output.
pub(crate) fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
