//! Deterministic random substreams keyed by `(seed, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `index` of the generator seeded with `seed`. Results that
/// are computed record by record stay identical whatever the worker count.
pub fn substream(seed: u64, index: u64) -> StreamRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

/// Second family of streams for the same seed, disjoint from [`substream`].
pub fn aux_substream(seed: u64, index: u64) -> StreamRng {
    substream(seed, index | (1u64 << 63))
}
