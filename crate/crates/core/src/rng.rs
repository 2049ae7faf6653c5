//! Seeded random streams.
//!
//! Every consumer of randomness owns its own [`Stream`]. Streams derived from
//! the same seed with different tags are independent, which keeps e.g. the
//! environment's noise identical across policies that consume the proposal
//! stream differently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Named sub-streams used by the experiment loop.
pub mod tags {
    pub const ENV: u64 = 1;
    pub const LEARNER_INIT: u64 = 2;
    pub const LEARNER_TRAIN: u64 = 3;
    pub const VALIDATION: u64 = 4;
    pub const POLICY_INIT: u64 = 5;
    pub const PROPOSAL: u64 = 6;
    pub const PROBE: u64 = 7;
    pub const WARM_START: u64 = 8;
    pub const TRAINER: u64 = 9;
}

pub fn stream(seed: u64, tag: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

pub fn from_seed(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}
