//! Seed derivation for independent random streams.
//!
//! Every stochastic draw in a run is taken from a stream keyed by
//! `(master seed, generation, index, purpose)`, so the order in which workers
//! finish never changes what they sample.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    FixedWeights,
    Perturbation,
    ParentDraw,
    Fitness,
    EliteEpisode,
    Evaluation,
    RunSeed,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::FixedWeights => 1,
            Purpose::Perturbation => 2,
            Purpose::ParentDraw => 3,
            Purpose::Fitness => 4,
            Purpose::EliteEpisode => 5,
            Purpose::Evaluation => 6,
            Purpose::RunSeed => 7,
        }
    }
}

/// Identifies one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamId {
    pub seed: u64,
    pub generation: u64,
    pub index: u64,
    pub purpose: Purpose,
}

impl StreamId {
    pub fn new(seed: u64, generation: u64, index: u64, purpose: Purpose) -> Self {
        StreamId {
            seed,
            generation,
            index,
            purpose,
        }
    }

    /// 64-bit key mixing all four components.
    pub fn key(&self) -> u64 {
        let mut h = splitmix64(self.seed);
        for part in [self.purpose.tag(), self.generation, self.index] {
            h = splitmix64(h ^ part.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        }
        h
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.key())
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
