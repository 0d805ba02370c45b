//! Named random streams derived from a root seed.
//!
//! Every consumer of randomness gets its own ChaCha stream so that, for a
//! given replicate seed, the initial duels are shared by all policies while
//! oracle draws and policy draws stay independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    InitDuels = 1,
    Oracle = 2,
    Policy = 3,
    Hyper = 4,
    Landmarks = 5,
}

/// Stream `stream` of the generator seeded with `seed`, sub-indexed by `index`.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) | (index & 0xFFFF_FFFF_FFFF));
    rng
}
