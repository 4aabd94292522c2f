//! Counter-based random streams.
//!
//! Every draw in an experiment comes from a ChaCha stream addressed by
//! `(seed, purpose, step, node)`, so results do not depend on the order in
//! which roots are visited or on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes. Distinct purposes never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Batch = 2,
    Sampling = 3,
    Graph = 4,
    Environment = 5,
    Policy = 6,
    Probe = 7,
    Split = 8,
    Corruption = 9,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes an arbitrary list of words into a single 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    words.iter().fold(0x243F_6A88_85A3_08D3, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Stream for `(seed, purpose, step)`; `node` selects the ChaCha stream id.
pub fn stream(seed: u64, purpose: Purpose, step: u64, node: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, purpose as u64, step]));
    rng.set_stream(node);
    rng
}

/// Stream that only depends on the seed and purpose.
pub fn root_stream(seed: u64, purpose: Purpose) -> StreamRng {
    stream(seed, purpose, 0, 0)
}
