//! Seeded random streams.
//!
//! Every stream is a xoshiro256++ generator. A stream is identified by the
//! user seed, a purpose tag and an index; the three are folded into a 64-bit
//! state with SplitMix64 (the tag is hashed with 64-bit FNV-1a first), and that
//! state seeds the generator through `SeedableRng::seed_from_u64`. Any
//! implementation that follows these steps reproduces identical models and
//! samples.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Independent stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    let state = splitmix64(splitmix64(splitmix64(seed) ^ fnv1a(tag)) ^ index);
    Xoshiro256PlusPlus::seed_from_u64(state)
}

/// Derived 64-bit seed, for handing to a component that takes a plain seed.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    stream(seed, tag, index).random()
}

pub fn uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Standard normal restricted to `[lo, hi]` by rejection.
pub fn truncated_normal(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    loop {
        let v: f64 = rng.sample(StandardNormal);
        if v >= lo && v <= hi {
            return v;
        }
    }
}

pub fn normal(rng: &mut StreamRng, std: f64) -> f64 {
    std * rng.sample::<f64, _>(StandardNormal)
}
