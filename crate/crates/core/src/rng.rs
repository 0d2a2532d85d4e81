//! Seeded random number generation.
//!
//! All randomness flows through [`Rng`], a xoshiro256++ generator seeded via
//! SplitMix64 expansion of a 64-bit seed. Sub-streams are derived with
//! [`derive_seed`] so that independent components never share a stream.

use rand::SeedableRng;
pub use rand::Rng as RngExt;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// One SplitMix64 output step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream.wrapping_add(0x5EED)))
}

/// Fisher-Yates shuffle driven by `rng`.
pub fn shuffle<T>(items: &mut [T], rng: &mut Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// `count` distinct indices from `0..pool`, in sampled order.
pub fn sample_without_replacement(pool: usize, count: usize, rng: &mut Rng) -> alloc::vec::Vec<usize> {
    let mut idx: alloc::vec::Vec<usize> = (0..pool).collect();
    let count = count.min(pool);
    for i in 0..count {
        let j = rng.gen_range(i..pool);
        idx.swap(i, j);
    }
    idx.truncate(count);
    idx
}
