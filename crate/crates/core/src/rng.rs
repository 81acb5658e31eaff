//! Seeded generators. Every random draw in the crate goes through one of these.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// A generator for `seed`, on an independent stream per purpose.
pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids, so unrelated consumers of one seed never share draws.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const CORRUPT: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const SAMPLE: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const SYNTH: u64 = 8;
    pub const NONMEMBER: u64 = 9;
    pub const ATTACK: u64 = 10;
    pub const NULL_CONTROL: u64 = 11;
}
