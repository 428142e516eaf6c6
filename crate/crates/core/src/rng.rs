//! Named, seeded random streams.
//!
//! A stream is identified by a 64-bit seed and a name. The seed keys a
//! ChaCha8 generator and the name (FNV-1a hashed) selects its stream id, so
//! equal `(seed, name)` pairs produce bit-identical draws on every platform
//! and differently named streams are independent.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    name: String,
    inner: ChaCha8Rng,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl RngStream {
    pub fn new(seed: u64, name: impl Into<String>) -> Self {
        let name = name.into();
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(fnv1a(name.as_bytes()));
        Self { seed, name, inner }
    }

    /// A child stream named `"{self.name}/{sub}"` under the same seed.
    pub fn derive(&self, sub: &str) -> Self {
        Self::new(self.seed, format!("{}/{}", self.name, sub))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
