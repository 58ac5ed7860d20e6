//! Seeded, stream-indexed random number generation.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` addressed by
//! `(master seed, domain, index)`. The domain separates unrelated uses of the
//! same master seed and the index selects a ChaCha stream, so per-sample work
//! can run on any number of workers in any order and still produce identical
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Each domain gets an independent key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    Nominal = 1,
    Ball = 2,
    Amls = 3,
    Detector = 4,
    Probe = 5,
    GroundTruthProbe = 6,
    Repetition = 7,
    Validation = 8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    master: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// The generator for item `index` within `domain`.
    pub fn rng(&self, domain: Domain, index: u64) -> ChaCha8Rng {
        let key = splitmix64(self.master ^ splitmix64(domain as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(index);
        rng
    }

    /// An independent seed space, e.g. for one repetition of an experiment.
    pub fn child(&self, tag: u64) -> SeedStream {
        SeedStream {
            master: splitmix64(splitmix64(self.master ^ Domain::Repetition as u64) ^ splitmix64(tag)),
        }
    }
}
