//! Deterministic random streams.
//!
//! Every stream is ChaCha20 (`rand_chacha::ChaCha20Rng`), which is portable and
//! produces identical output on every platform. A `(seed, label)` pair maps to a
//! substream by seeding with `seed` via `SeedableRng::seed_from_u64` and selecting
//! the 64-bit ChaCha stream id `fnv1a64(label)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

/// 64-bit FNV-1a hash.
pub fn fnv1a64(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Independent stream for `(seed, label)`.
pub fn substream(seed: u64, label: &str) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(label));
    rng
}

/// Derives a child seed, for fanning a config-level seed out to cells.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    substream(seed, label).gen()
}

/// Inverse-CDF draw from a discrete distribution given a uniform `u` in `[0,1)`.
pub fn categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left total mass slightly below one.
    last_positive
}
