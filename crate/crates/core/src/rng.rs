//! Seeded, portable random numbers.
//!
//! All draws come from ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`)
//! with an explicit stream id per purpose. Floats are built from the top
//! 53 bits of `next_u64`, so sequences are reproducible in any language
//! that implements ChaCha8 and the same seed expansion.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream ids keep independent purposes from sharing draws.
pub mod stream {
    pub const SEQUENCE: u64 = 1;
    pub const PHI: u64 = 2;
    pub const PSI: u64 = 3;
    pub const SUITE: u64 = 4;
}

pub struct LabRng(ChaCha8Rng);

impl LabRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        LabRng(rng)
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Integer in `0..n` (n > 0).
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.unit() * n as f64) as u64).min(n - 1)
    }
}
