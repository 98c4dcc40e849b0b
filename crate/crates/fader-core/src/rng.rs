//! Seed fan-out.
//!
//! One global 64-bit seed is expanded into named substreams so that every
//! stochastic component (corpus generation, weight init, batch shuffling,
//! impostor sampling) draws from its own independent, reproducible stream.
//! Derivation is a pure function of the label path, so components can be
//! re-seeded in isolation and results do not depend on evaluation order or
//! thread count.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// A node in the seed-derivation tree.
#[derive(Clone, Copy, Debug)]
pub struct SeedTree {
    state: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { state: splitmix64(seed) }
    }

    /// Derive a child stream from a label.
    pub fn derive(&self, label: &str) -> SeedTree {
        let mut s = self.state;
        for &b in label.as_bytes() {
            s = splitmix64(s ^ u64::from(b));
        }
        SeedTree { state: splitmix64(s) }
    }

    /// Derive a child stream from an index (per-speaker, per-epoch, ...).
    pub fn index(&self, i: u64) -> SeedTree {
        SeedTree { state: splitmix64(self.state ^ i.rotate_left(17) ^ 0x9E37_79B9_7F4A_7C15) }
    }

    pub fn seed(&self) -> u64 {
        self.state
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.state)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
