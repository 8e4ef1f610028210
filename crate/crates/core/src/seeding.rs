//! Deterministic seed derivation.
//!
//! Every source of randomness in the crate is a ChaCha stream whose seed is
//! derived by hashing a master seed together with a purpose tag and stream
//! coordinates (step, prompt, sample index). Runs are therefore reproducible
//! from `(seed, global_step)` alone, rollout workers never share rng state,
//! and resuming from a checkpoint replays the exact remaining stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// FNV-1a over a byte slice, seeded by `state`.
pub fn fnv1a(mut state: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

/// Hash of a master seed plus an arbitrary list of labeled parts.
pub fn derive_seed(master: u64, parts: &[&[u8]]) -> u64 {
    let mut state = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    for part in parts {
        // Length-prefix each part so ("ab","c") and ("a","bc") differ.
        state = fnv1a(state, &(part.len() as u64).to_le_bytes());
        state = fnv1a(state, part);
    }
    state
}

/// Deterministic generator for a derived seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named stream coordinates used by the trainer.
#[derive(Debug, Clone, Copy)]
pub struct StreamSeed {
    seed: u64,
}

impl StreamSeed {
    pub fn new(master: u64) -> Self {
        Self { seed: master }
    }

    pub fn value(&self) -> u64 {
        self.seed
    }

    /// Sub-stream for a purpose tag (e.g. "regular", "explore", "replay").
    pub fn scoped(&self, purpose: &str) -> StreamSeed {
        StreamSeed {
            seed: derive_seed(self.seed, &[purpose.as_bytes()]),
        }
    }

    /// Sub-stream for a numeric coordinate such as a training step.
    pub fn at(&self, index: u64) -> StreamSeed {
        StreamSeed {
            seed: derive_seed(self.seed, &[&index.to_le_bytes()]),
        }
    }

    /// Sub-stream keyed by an identifier such as a prompt id.
    pub fn keyed(&self, key: &str) -> StreamSeed {
        StreamSeed {
            seed: derive_seed(self.seed, &[key.as_bytes()]),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        rng_from(self.seed)
    }
}
