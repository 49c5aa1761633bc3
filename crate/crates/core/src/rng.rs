//! Hierarchical seeded random streams.
//!
//! Every random draw in a run comes from a stream addressed by
//! `(run, round, purpose, index)`, so swapping one agent for another never
//! perturbs problem draws or label shuffles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Problems,
    Labels,
    ConsumerTieBreak,
    ExpertAgent,
    ConsumerAgent,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Problems => 0x5052_4f42,
            Purpose::Labels => 0x4c41_4245,
            Purpose::ConsumerTieBreak => 0x5449_4542,
            Purpose::ExpertAgent => 0x4558_5052,
            Purpose::ConsumerAgent => 0x434f_4e53,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(state: u64, value: u64) -> u64 {
    splitmix64(state ^ splitmix64(value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngTree {
    seed: u64,
}

impl RngTree {
    pub fn new(seed: u64) -> Self {
        RngTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, run: u32, round: u32, purpose: Purpose, index: u64) -> StreamRng {
        let mut s = mix(self.seed, run as u64);
        s = mix(s, round as u64);
        s = mix(s, purpose.tag());
        s = mix(s, index);
        ChaCha8Rng::seed_from_u64(s)
    }
}
