//! Deterministic random streams.
//!
//! Every stochastic step draws from a ChaCha8 stream whose seed is derived
//! from the run seed plus a key naming the step, so results never depend on
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hash::Hasher;

pub type StreamRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for `(seed, purpose, key...)`.
pub fn derive(seed: u64, purpose: &str, key: &[u64]) -> StreamRng {
    let mut h = Hasher::new("evopath.rng.v1");
    h.u64(seed).str(purpose).u64(key.len() as u64);
    for &k in key {
        h.u64(k);
    }
    ChaCha8Rng::from_seed(h.finish().0)
}
