//! Deterministic, order-independent random streams.
//!
//! Every random draw in the crate comes from a [`StreamRng`] keyed by
//! `(master_seed, purpose, rep, replicate, episode)`. The key is mixed into a
//! 256-bit ChaCha seed, so two tasks never share a stream and the output of a
//! task does not depend on which thread ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Part of the stream key so that, e.g., the
/// data-generating stream of rep 3 never collides with bootstrap replicate 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Data = 1,
    ModelBased = 2,
    Episodic = 3,
    Diagnostic = 4,
}

/// Index used for `replicate` when a stream is not tied to a bootstrap replicate.
pub const NO_REPLICATE: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn stream(&self, purpose: Purpose, rep: u64, replicate: u64, episode: u64) -> StreamRng {
        let mut state = splitmix64(self.master_seed ^ 0x6a09_e667_f3bc_c908);
        for word in [purpose as u64, rep, replicate, episode] {
            state = splitmix64(state ^ splitmix64(word.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        let mut seed = [0u8; 32];
        let mut x = state;
        for chunk in seed.chunks_exact_mut(8) {
            x = splitmix64(x);
            chunk.copy_from_slice(&x.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
