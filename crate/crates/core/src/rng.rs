//! Seeded, stream-splittable random source.
//!
//! ChaCha8 is counter based: `(seed, stream)` fixes the whole sequence on
//! every platform, and distinct stream ids give independent sequences, so
//! Monte-Carlo trials can be keyed by id instead of by sequential reseeding.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for SeededRng {
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

/// Stream id for trial `trial` of configuration `config`.
pub fn trial_stream(config: u32, trial: u32) -> u64 {
    ((config as u64) << 32) | trial as u64
}

/// Reserved stream ids for instance generation, kept above the trial range.
pub mod streams {
    pub const NOISE: u64 = u64::MAX;
    pub const SIGNAL: u64 = u64::MAX - 1;
    pub const OPERATOR: u64 = u64::MAX - 2;
    pub const WINDOW: u64 = u64::MAX - 3;
    pub const INIT: u64 = u64::MAX - 4;
    pub const CHECKS: u64 = u64::MAX - 5;
}
