//! Seed derivation and random-stream helpers.
//!
//! All randomness in the crate flows through [`ChaCha8Rng`] streams derived
//! from explicit `u64` seeds, so every experiment is replayable from its
//! recorded seed alone. Derived streams are decorrelated by mixing the parent
//! seed with a purpose tag through SplitMix64.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// SplitMix64 finalizer; used to mix seeds with stream tags.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream tag.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    splitmix64(parent ^ splitmix64(tag))
}

/// Open a deterministic random stream for `(parent, tag)`.
pub fn stream(parent: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, tag))
}

/// Stream tags for the fixed top-level consumers of an experiment seed.
pub mod tags {
    pub const CHANNEL: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const TRAIN: u64 = 5;
}

/// One draw from `CN(0, variance)` (circularly-symmetric complex Gaussian).
pub fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// A random complex vector with unit Euclidean norm.
pub fn random_unit_complex(rng: &mut impl Rng, n: usize) -> Vec<Complex64> {
    loop {
        let v: Vec<Complex64> = (0..n).map(|_| complex_gaussian(rng, 1.0)).collect();
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.iter().map(|z| z / norm).collect();
        }
    }
}
