//! Seeded random substreams.
//!
//! Every stochastic quantity in a run is drawn from a ChaCha8 stream keyed by
//! `(seed, tag, index)`, so a slot's channel or task draw never depends on the
//! order in which other slots were generated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for substreams. Values are part of the reproducibility
/// contract; do not renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Users = 1,
    Channel = 2,
    Tasks = 3,
    Arrivals = 4,
    Episode = 5,
    Agent = 6,
    Replay = 7,
    Evaluation = 8,
    Fixture = 9,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a parent seed with a tag and index into a child seed.
pub fn derive_seed(seed: u64, tag: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tag as u64)) ^ index)
}

pub fn substream(seed: u64, tag: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}
