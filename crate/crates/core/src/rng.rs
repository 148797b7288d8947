//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, stream, step)`. ChaCha is itself a
//! counter-mode generator, so a stream is selected with `set_stream` and the
//! step is mapped onto a disjoint block of the 2^68-word keystream. Two
//! computations that ask for the same address see the same numbers no matter
//! what ran before them, which is what lets grid points share shock
//! sequences and lets independent fits run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words reserved for a single step: 2^36 u32 values.
const STEP_SHIFT: u32 = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
}

impl StreamKey {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Generator positioned at the start of `step`'s block.
    pub fn at(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos((step as u128) << STEP_SHIFT);
        rng
    }

    /// Generator for one-shot use (no step structure).
    pub fn rng(&self) -> ChaCha8Rng {
        self.at(0)
    }
}

/// Derive a child seed from a parent seed and a label, so that pipeline
/// stages and factors draw from named, non-overlapping substreams.
pub fn substream_seed(seed: u64, label: &str) -> u64 {
    let mut h = splitmix64(seed ^ 0x6a09_e667_f3bc_c908);
    for b in label.bytes() {
        h = splitmix64(h ^ b as u64);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
