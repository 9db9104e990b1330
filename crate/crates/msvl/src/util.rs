//! Seed derivation, reproducible sampling helpers, and checksums.
//!
//! All randomness in the crate flows through [`ChaCha12Rng`] seeded from a
//! `u64`, with helper samplers defined here instead of distribution crates so
//! that streams are bit-stable across platforms and dependency upgrades.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// SplitMix64 step, used to whiten seeds before deriving sub-streams.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a base seed and a stream index.
///
/// Children are used for per-image, per-resample, and per-epoch streams so
/// that parallel evaluation order cannot change results.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_add(0x9E37_79B9)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Uniform sample in `[0, 1)` with 53 random mantissa bits.
pub fn uniform_f64(rng: &mut ChaCha12Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Uniform sample in `[lo, hi)`.
pub fn uniform_in(rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform_f64(rng)
}

/// Standard normal sample via Box-Muller.
pub fn normal_f64(rng: &mut ChaCha12Rng) -> f64 {
    // u1 is kept away from 0 so ln is finite.
    let u1 = (uniform_f64(rng)).max(1e-300);
    let u2 = uniform_f64(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform index in `[0, bound)`. The modulo bias is below 2^-53 for the
/// bounds used in this crate (all far below 2^32).
pub fn uniform_index(rng: &mut ChaCha12Rng, bound: usize) -> usize {
    debug_assert!(bound > 0);
    (rng.next_u64() % bound as u64) as usize
}

/// In-place Fisher-Yates shuffle driven by `uniform_index`.
pub fn shuffle<T>(rng: &mut ChaCha12Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_index(rng, i + 1);
        items.swap(i, j);
    }
}

/// Hex-encoded SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
