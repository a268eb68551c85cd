//! Seed derivation for reproducible runs.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`). Child
//! seeds are derived from a master seed by folding identifying integers
//! through the SplitMix64 finalizer, so a result depends only on *what* it
//! is (model, condition, example, step), never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into one 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_0F5E_ED5E_ED00, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Noise generators for one (model, condition) pair. Each (example, step)
/// gets its own ChaCha stream under a shared key.
#[derive(Debug, Clone)]
pub struct NoiseStreams {
    base: ChaCha8Rng,
}

impl NoiseStreams {
    pub fn new(master_seed: u64, model_index: u64, condition_key: u64) -> Self {
        Self {
            base: seeded(derive_seed(&[master_seed, model_index, condition_key])),
        }
    }

    pub fn stream(&self, example: u64, step: u64) -> ChaCha8Rng {
        debug_assert!(step < 1 << 24 && example < 1 << 40);
        let mut rng = self.base.clone();
        rng.set_stream((example << 24) | step);
        rng.set_word_pos(0);
        rng
    }
}
