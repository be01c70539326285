//! Deterministic, splittable random streams. Every source of randomness in
//! the crate flows from a (seed, stream id) pair so that runs are
//! reproducible and sub-streams (per split, per query) stay independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

/// Fixed stream ids, so independent consumers never collide.
pub mod stream_ids {
    pub const SIMULATOR: u64 = 1;
    pub const SPLITS_BASE: u64 = 1_000;
    pub const TRAINING: u64 = 2_000_000;
    pub const PREDICTION_BASE: u64 = 3_000_000;
}

/// Returns the deterministic stream identified by `(seed, stream_id)`.
pub fn seeded_stream(seed: u64, stream_id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn standard_normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}
