//! Deterministic RNG stream derivation.
//!
//! Every random draw in the library comes from a ChaCha8 generator seeded
//! from a user-visible `u64` seed plus a stream index, so corpus items can
//! be generated independently (and in parallel) with bit-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for stream `stream` of `seed`. Streams never overlap.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
