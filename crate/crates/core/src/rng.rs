//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream keyed by a seed and a
//! short list of counters (purpose, step, slot, ...). Streams never depend on
//! the order in which other streams were consumed, so batch assembly and
//! candidate sampling are reproducible under any execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes, kept distinct so that e.g. training batches and model
/// initialisation never share a stream.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const PLAN: u64 = 3;
    pub const EPISODE: u64 = 4;
    pub const DATASET: u64 = 5;
    pub const INVDYN: u64 = 6;
    pub const SELECT: u64 = 7;
    pub const TEST: u64 = 99;
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generator for the stream identified by `(seed, counters)`.
pub fn stream(seed: u64, counters: &[u64]) -> StreamRng {
    let mut key = [0u8; 32];
    let mut h = mix64(seed ^ 0x5AD0_5EED_0000_0001);
    for (i, &c) in counters.iter().enumerate() {
        h = mix64(h ^ mix64(c.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))));
    }
    for (lane, chunk) in key.chunks_exact_mut(8).enumerate() {
        let word = mix64(h.wrapping_add((lane as u64).wrapping_mul(0xD134_2543_DE82_EF95)));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
