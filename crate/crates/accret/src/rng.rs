//! Deterministic random-stream derivation.
//!
//! Every stochastic stage draws from a ChaCha stream derived from the single
//! root seed, a stage label, and a counter. Replications seeded by counter are
//! independent of thread scheduling, so parallel and serial runs produce
//! identical output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives a 64-bit sub-seed from `(root, label, index)`.
pub fn stream_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut state = root ^ fnv1a(label);
    let a = splitmix64(&mut state);
    state ^= index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    a ^ splitmix64(&mut state)
}

/// ChaCha generator for the given `(root, label, index)` stream.
pub fn stream_rng(root: u64, label: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(stream_seed(root, label, index))
}
