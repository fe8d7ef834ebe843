//! Seed derivation and a checkpointable generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type TrackerRng = ChaCha8Rng;

/// Independent sub-seeds of one global seed, keyed by purpose and index.
pub fn derive_seed(base: u64, domain: u64, index: u64) -> u64 {
    let mut x = base;
    for word in [domain, index] {
        x = splitmix64(x ^ splitmix64(word.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    x
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub mod domain {
    pub const TRAINING: u64 = 1;
    pub const TREE: u64 = 2;
    pub const OBSERVATION: u64 = 3;
    pub const TRACKER: u64 = 4;
}

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, stored as a decimal string since it is a u128.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &TrackerRng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<TrackerRng, std::num::ParseIntError> {
        let mut rng = TrackerRng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse()?);
        Ok(rng)
    }
}
