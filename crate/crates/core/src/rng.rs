//! Seedable, splittable random number generation.
//!
//! Every stochastic operation takes its generator explicitly. Chains derive
//! per-step substreams from the master seed and a key path, so results do not
//! depend on thread scheduling or on how a run was interrupted and resumed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct ChainRng(ChaCha8Rng);

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl ChainRng {
    pub fn seed_from_u64(seed: u64) -> Self {
        ChainRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream identified by `seed` and a key path such as
    /// `[sweep, step, graph]`.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let mut bytes = [0u8; 32];
        let mut h = splitmix64(seed);
        for (i, chunk) in bytes.chunks_mut(8).enumerate() {
            for &k in path {
                h = splitmix64(h ^ splitmix64(k.wrapping_add(i as u64)));
            }
            h = splitmix64(h.wrapping_add(i as u64));
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        ChainRng(ChaCha8Rng::from_seed(bytes))
    }

    /// Splits off a child generator, advancing this one.
    pub fn split(&mut self) -> Self {
        let mut bytes = [0u8; 32];
        self.0.fill_bytes(&mut bytes);
        ChainRng(ChaCha8Rng::from_seed(bytes))
    }
}

impl RngCore for ChainRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
