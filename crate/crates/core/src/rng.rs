//! Seed bookkeeping. Every random draw in a run descends from one root seed
//! through named sub-streams, so changing how one subsystem consumes
//! randomness never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a parent seed, a stream name and an index.
pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(name.as_bytes())).wrapping_add(splitmix64(index)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    root: u64,
}

impl SeedStream {
    pub fn new(root: u64) -> Self {
        SeedStream { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn seed(&self, name: &str) -> u64 {
        derive_seed(self.root, name, 0)
    }

    pub fn seed_indexed(&self, name: &str, index: u64) -> u64 {
        derive_seed(self.root, name, index)
    }

    pub fn rng(&self, name: &str) -> Rng {
        Rng::seed_from_u64(self.seed(name))
    }

    pub fn rng_indexed(&self, name: &str, index: u64) -> Rng {
        Rng::seed_from_u64(self.seed_indexed(name, index))
    }
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
