//! Reproducible randomness with named, index-addressable substreams.
//!
//! A [`SeededRng`] is a small description `(seed, stream label)`; calling
//! [`SeededRng::generator`] materializes a ChaCha8 generator whose key is a
//! hash of that description. Deriving children with [`SeededRng::substream`]
//! or [`SeededRng::indexed`] never advances any state, so draws for sample
//! `i` are the same no matter which thread makes them or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
    stream: String,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            stream: String::from("root"),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }

    /// Child stream identified by a label, e.g. `"noise"` or `"init"`.
    pub fn substream(&self, label: &str) -> Self {
        Self {
            seed: self.seed,
            stream: format!("{}/{}", self.stream, label),
        }
    }

    /// Child stream identified by an integer, e.g. a sample or trial index.
    pub fn indexed(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream: format!("{}#{}", self.stream, index),
        }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let label = fnv1a(self.stream.as_bytes());
        let mut state = splitmix64(self.seed ^ splitmix64(label));
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}
