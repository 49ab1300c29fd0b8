//! Counter-keyed random streams.
//!
//! Every random draw in a simulation comes from a ChaCha8 stream whose key is
//! the tuple `(seed, round, client, purpose)`. Streams never share state, so
//! the order in which clients are scheduled (or the number of worker threads)
//! cannot change any draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Client id used for server-side draws such as participant sampling.
pub const SERVER: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    ClientSampling = 1,
    Gradient = 2,
    Compression = 3,
    ProblemData = 4,
    Verification = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for one `(seed, round, client, purpose)` cell.
pub fn stream(seed: u64, round: u64, client: u64, purpose: Purpose) -> StreamRng {
    // splitmix64 is a bijection, so distinct tuples give distinct keys.
    let words = [
        splitmix64(seed),
        splitmix64(round ^ 0x5851_f42d_4c95_7f2d),
        splitmix64(client ^ 0x1405_7b7e_f767_814f),
        splitmix64(purpose as u64),
    ];
    let mut key = [0u8; 32];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stream for one-off draws that are not tied to a round (problem data, tests).
pub fn seeded(seed: u64, purpose: Purpose) -> StreamRng {
    stream(seed, 0, 0, purpose)
}
