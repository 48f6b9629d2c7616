//! Named, reproducible random streams.
//!
//! A stream seed is `splitmix64` applied to a fold of the master seed, the
//! FNV-1a hash of the stream name and the run index:
//!
//! ```text
//! s = splitmix64(master ^ splitmix64(fnv1a64(name) ^ splitmix64(run_index)))
//! ```
//!
//! and the generator for the stream is ChaCha8 seeded with `s`. Both
//! functions are fixed here so streams are identical on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

/// Stream used to draw initial weights.
pub const INIT: &str = "init";
/// Stream used to permute training examples each epoch.
pub const SHUFFLE: &str = "shuffle";
/// Stream used to draw the minibatch for gradient scores.
pub const SCORE_BATCH: &str = "score_batch";
/// Stream used by the random pruning baseline.
pub const RANDOM_PRUNE: &str = "random_prune";
/// Stream used by the synthetic data generator.
pub const DATA: &str = "data";

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub master_seed: u64,
    pub run_index: u64,
}

impl SeedLineage {
    pub fn new(master_seed: u64, run_index: u64) -> Self {
        SeedLineage { master_seed, run_index }
    }

    pub fn stream_seed(&self, name: &str) -> u64 {
        let inner = splitmix64(fnv1a64(name.as_bytes()) ^ splitmix64(self.run_index));
        splitmix64(self.master_seed ^ inner)
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.stream_seed(name))
    }
}
