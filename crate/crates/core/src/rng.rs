//! Deterministic random streams.
//!
//! Every random draw in the crate flows from a single root seed. Named
//! substreams let independent consumers (data generation, cohort sampling,
//! privatization) draw without perturbing each other, and block substreams
//! make coordinate-parallel work independent of the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Number of coordinates covered by one block substream.
pub const BLOCK_LEN: usize = 4096;

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Substream `stream` of the generator rooted at `seed`.
pub fn substream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Substream keyed by a name, e.g. `"cohort"` or `"privatize"`.
pub fn named(seed: u64, name: &str) -> StreamRng {
    substream(seed, fnv1a(name.as_bytes()))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
