//! Seeded random source shared by every stochastic routine in the crate.
//!
//! All randomness goes through ChaCha8, a counter-based generator, seeded
//! from a single `u64`. Results are reproducible for a given seed and crate
//! version.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type AtcRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> AtcRng {
    ChaCha8Rng::seed_from_u64(seed)
}
