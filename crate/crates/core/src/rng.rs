//! Seeded random streams, one per consumer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream identifiers. Adding a consumer never shifts the
/// sequence seen by another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    DataOrder = 1,
    Materials = 2,
    Geometry = 3,
    Init = 4,
    Batches = 5,
    Epsilon = 6,
    Permute = 7,
    Eval = 8,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
