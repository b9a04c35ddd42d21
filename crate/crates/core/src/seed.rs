//! Named sub-seeds.
//!
//! All randomness in a run flows from one top-level seed. Components draw
//! their own stream from `derive(seed, "name", &[indices...])` so that
//! they can be exercised in isolation and reordered without perturbing
//! each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SAMPLER: &str = "sampler";
pub const INIT: &str = "init";
pub const DROPOUT: &str = "dropout";
pub const PATCHES: &str = "patches";
pub const PROBE: &str = "probe";

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derive a sub-seed from a base seed, a stream name and index path.
pub fn derive(seed: u64, name: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ fnv1a(name));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i));
    }
    h
}

pub fn rng(seed: u64, name: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, name, indices))
}
