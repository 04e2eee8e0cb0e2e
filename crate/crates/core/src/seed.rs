//! Deterministic random streams.
//!
//! Every sampling site derives its own ChaCha stream from a tuple of integers
//! (master seed, task, member, step, turn, …), so results never depend on
//! thread scheduling or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a list of integers into one 64-bit seed.
pub fn derive(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(parts))
}

/// Domain tags keep streams for different purposes apart.
pub mod tag {
    pub const ROLLOUT: u64 = 1;
    pub const SHARED_FIRST: u64 = 2;
    pub const TURNWISE_COIN: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const INIT: u64 = 5;
    pub const CORRUPT: u64 = 6;
    pub const TEACHER: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const GENERATE: u64 = 9;
    pub const COLDSTART: u64 = 10;
}
