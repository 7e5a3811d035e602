//! Seeded uniform streams.
//!
//! Generator: xoshiro256** seeded from the 64-bit seed with SplitMix64.
//! Stream `s` is the base generator advanced by `s` calls to `jump()`
//! (2^128 steps each), so streams never overlap. A uniform is taken from
//! the top 53 bits of each output as `((x >> 11) + 0.5) * 2^-53`, which
//! lies strictly inside (0, 1) and is safe to feed to inverse CDFs.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub const GENERATOR_NAME: &str = "xoshiro256**/splitmix64/jump-v1";

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct UniformStream {
    inner: Xoshiro256StarStar,
}

impl UniformStream {
    pub fn new(seed: u64, stream: u32) -> Self {
        let mut inner = Xoshiro256StarStar::seed_from_u64(seed);
        for _ in 0..stream {
            inner.jump();
        }
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn next_open01(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }
}
