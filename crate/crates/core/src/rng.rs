//! Counter-addressed random streams.
//!
//! Every draw in a Monte Carlo run is addressed by `(seed, stream, step)`:
//! the seed keys a ChaCha8 generator, the stream id selects one of its 2^64
//! independent streams, and the step selects a fixed-size window of words
//! inside that stream. Results therefore never depend on how paths are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words reserved per step window. Draws for one step never come close.
const WORDS_PER_STEP: u128 = 1 << 20;

pub type StreamRng = ChaCha8Rng;

/// Generator positioned at the start of window `step` of stream `stream`.
pub fn stream(seed: u64, stream: u64, step: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(step as u128 * WORDS_PER_STEP);
    rng
}

/// Repositions an existing generator to another step window of its stream.
pub fn seek(rng: &mut StreamRng, step: u64) {
    rng.set_word_pos(step as u128 * WORDS_PER_STEP);
}

/// Derives an independent master seed from `(seed, salt)` with SplitMix64.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
