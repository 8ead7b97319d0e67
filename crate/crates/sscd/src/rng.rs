//! Deterministic random numbers.
//!
//! All randomness in the crate flows through ChaCha8 keyed by a user seed,
//! with one stream per logical consumer so that, e.g., drawing more synthetic
//! features never shifts the token stream. Gaussian variates come from a
//! fixed Box-Muller transform (two 64-bit draws per variate), so identical
//! seeds give bit-identical values on every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Logical consumers of randomness. Each gets its own ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    /// Generic seeded Gaussian tensors (tests, ad-hoc sampling).
    Gaussian = 0,
    /// Synthetic feature noise (AR(1) innovations).
    Features = 1,
    /// Synthetic prompt/answer token draws.
    Tokens = 2,
    /// Surrogate parameter initialization.
    Surrogate = 3,
    /// Disruptor parameter initialization.
    Disruptor = 4,
    /// Epoch shuffling during training.
    Shuffle = 5,
    /// Sampling-mode decoding.
    Sampling = 6,
}

/// A seeded generator on the given stream.
pub fn stream(seed: u64, id: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Uniform draw in [0, 1) using the top 53 bits of one u64.
pub fn uniform_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * INV_2_53
}

/// Standard normal via Box-Muller; consumes exactly two u64 draws.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // u1 in (0, 1] so the logarithm is finite.
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * INV_2_53;
    let u2 = (rng.next_u64() >> 11) as f64 * INV_2_53;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Unbiased index in [0, n) via rejection sampling.
pub fn uniform_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    assert!(n > 0, "uniform_index over empty range");
    let bound = n as u64;
    let zone = (u64::MAX / bound) * bound;
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % bound) as usize;
        }
    }
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_index(rng, i + 1);
        items.swap(i, j);
    }
}
