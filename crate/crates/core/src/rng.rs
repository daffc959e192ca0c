//! Seeded random streams.
//!
//! Every random draw in a run comes from a ChaCha8 generator keyed by the
//! 64-bit run seed, with a distinct 64-bit stream id per consumer. A stream id
//! packs a purpose tag in the top byte and an index (episode, cycle, ...) in
//! the low 56 bits, so episode `i` sees the same numbers no matter which
//! worker generates it or how many workers exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    ActorInit = 1,
    CriticInit = 2,
    Episode = 3,
    Update = 4,
    EvalHeading = 5,
    Dataset = 6,
    HeldOut = 7,
    Misc = 8,
}

pub fn substream(seed: u64, stream: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}
