//! Named random substreams derived from one root seed.
//!
//! Every stochastic component (data generation, initialization, dropout,
//! noise injection, routing) draws from its own stream so that changing how
//! much randomness one of them consumes leaves the others untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const DATA: &str = "data";
pub const INIT: &str = "init";
pub const DROPOUT: &str = "dropout";
pub const NOISE: &str = "noise";
pub const ROUTING: &str = "routing";
pub const SHUFFLE: &str = "shuffle";
pub const SPLIT: &str = "split";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    root: u64,
}

impl SeedStream {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Seed for the stream called `name`.
    pub fn seed(&self, name: &str) -> u64 {
        // FNV-1a over the name, mixed with the root through splitmix64.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        splitmix64(self.root ^ splitmix64(h))
    }

    pub fn rng(&self, name: &str) -> Rng {
        Rng::seed_from_u64(self.seed(name))
    }

    /// A child stream, e.g. one per fold or per sweep point.
    pub fn child(&self, name: &str, index: u64) -> SeedStream {
        SeedStream::new(splitmix64(self.seed(name) ^ splitmix64(index.wrapping_add(1))))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
