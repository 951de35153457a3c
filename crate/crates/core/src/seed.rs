//! Deterministic seed derivation.
//!
//! A master seed is split into independent child seeds by drawing from a
//! ChaCha stream keyed on the master seed, one stream per tag.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Seeded generator used everywhere randomness is needed.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a child seed for `tag`. Distinct tags give unrelated streams.
pub fn split_seed(master: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(tag.wrapping_add(1));
    rng.next_u64()
}

/// The per-experiment seeds derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub noise: u64,
    pub basis_c: u64,
    pub basis_s: u64,
    pub cv: u64,
}

impl SeedPlan {
    pub fn from_master(master: u64) -> Self {
        Self {
            master,
            noise: split_seed(master, 0),
            basis_c: split_seed(master, 1),
            basis_s: split_seed(master, 2),
            cv: split_seed(master, 3),
        }
    }
}
