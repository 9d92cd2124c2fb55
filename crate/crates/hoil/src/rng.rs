//! Seed derivation. Every source of randomness in the crate flows through a
//! `ChaCha8Rng` derived from a run seed and a purpose tag, so that two
//! concerns (say rollouts and minibatch sampling) never share a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derive an independent stream from `seed` and a purpose tag.
pub fn derived(seed: u64, tag: &str) -> Rng {
    let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV offset basis
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Rng::seed_from_u64(mix(seed ^ mix(h)))
}
