//! Seeded random streams.
//!
//! Every random draw in the crate (fold shuffles, bootstrap samples, feature
//! subsampling, simulated data) comes from a xoshiro256++ generator. The
//! 256-bit state `s[0..4]` is initialised from the 64-bit seed with SplitMix64
//!
//! ```text
//! z  = (x += 0x9E3779B97F4A7C15)
//! z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! out = z ^ (z >> 31)
//! ```
//!
//! and advanced by
//!
//! ```text
//! out  = rotl(s0 + s3, 23) + s0
//! t    = s1 << 17
//! s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3
//! s2 ^= t;  s3 = rotl(s3, 45)
//! ```
//!
//! Both are pure integer recurrences, so streams are bit-identical on every
//! platform. Sub-streams are derived by XOR-ing a base seed with an index
//! (fold, tree, replication); the SplitMix64 expansion decorrelates them.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// The generator used throughout the crate.
pub type DmlRng = Xoshiro256PlusPlus;

/// Creates the stream for `seed`.
pub fn stream(seed: u64) -> DmlRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Derives a child seed from a parent seed and an index with one SplitMix64
/// step, so that `derive(a, i)` and `derive(b, j)` are unrelated even when
/// `a ^ i == b ^ j` would collide.
pub fn derive(seed: u64, index: u64) -> u64 {
    let mut z = (seed ^ index).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn uniform(rng: &mut DmlRng) -> f64 {
    rng.gen::<f64>()
}

/// Uniform integer in `0..=upper`.
pub fn below_inclusive(rng: &mut DmlRng, upper: usize) -> usize {
    rng.gen_range(0..=upper)
}

/// Standard normal draw by the Box–Muller transform (cosine branch).
pub fn standard_normal(rng: &mut DmlRng) -> f64 {
    // 1 - U lies in (0, 1], keeping the logarithm finite.
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// In-place Fisher–Yates shuffle.
pub fn shuffle<T>(rng: &mut DmlRng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below_inclusive(rng, i);
        items.swap(i, j);
    }
}

/// Draws `k` distinct indices from `0..n`, returned in ascending order.
pub fn sample_without_replacement(rng: &mut DmlRng, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    // partial Fisher–Yates: the first k slots end up holding the sample
    for i in 0..k {
        let j = i + below_inclusive(rng, n - 1 - i);
        pool.swap(i, j);
    }
    let mut out = pool[..k].to_vec();
    out.sort_unstable();
    out
}
