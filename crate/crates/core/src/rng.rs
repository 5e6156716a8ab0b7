//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 generator whose key is `(seed, trial)` and
//! whose stream id is a lane number. Lanes separate independent uses inside
//! one trial (a branch's acceptance draws, its answer, tie-breaking), so any
//! draw can be reproduced without replaying the others and trials can run on
//! any thread in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lane for the tie-break draw of a trial.
pub const LANE_TIE: u64 = u64::MAX;

/// Lane offset for per-branch answer and confidence draws.
pub const LANE_ANSWER_BASE: u64 = 1 << 32;

pub fn stream(seed: u64, trial: u64, lane: u64) -> ChaCha8Rng {
    let mut key = [0_u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(lane);
    rng
}
