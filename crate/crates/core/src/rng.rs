//! Deterministic random number generation.
//!
//! Every random draw in the crate goes through [`SeededRng`], a ChaCha8
//! stream cipher generator seeded from a single `u64`. ChaCha8 output is
//! defined bit-for-bit by its algorithm, so the same seed produces the same
//! stream on every platform. Independent consumers (class construction,
//! per-domain sampling, batching, weight init, ...) draw from separate
//! substreams, so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand::Rng;

/// Named substreams. The numeric values are part of the reproducibility
/// contract and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ClassSpecs = 1,
    DomainShift = 2,
    SourceSamples = 3,
    TargetSamples = 4,
    TestSplit = 5,
    TargetShuffle = 6,
    Batching = 7,
    WeightInit = 8,
    /// Fixed batch partition on which the training objective is tracked.
    LossProbe = 9,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for one named substream of this seed.
    pub fn stream(&self, stream: Stream) -> ChaCha8Rng {
        self.substream(stream as u64)
    }

    /// Generator for an arbitrary numbered substream.
    pub fn substream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<u64> = (0..8)
            .map({
                let mut r = SeededRng::new(7).stream(Stream::Batching);
                move |_| r.random()
            })
            .collect();
        let b: Vec<u64> = (0..8)
            .map({
                let mut r = SeededRng::new(7).stream(Stream::Batching);
                move |_| r.random()
            })
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn substreams_are_independent() {
        let rng = SeededRng::new(7);
        let x: u64 = rng.stream(Stream::ClassSpecs).random();
        let y: u64 = rng.stream(Stream::SourceSamples).random();
        assert_ne!(x, y);
    }

    #[test]
    fn stream_is_pinned() {
        // Guards against silent changes in the generator or seeding scheme.
        let v: u64 = SeededRng::new(0).substream(0).random();
        let again: u64 = ChaCha8Rng::seed_from_u64(0).random();
        assert_eq!(v, again);
    }
}
