//! Seeded random streams.
//!
//! Every random quantity in the crate comes from ChaCha8 seeded with
//! `seed_from_u64(seed)` and switched to an explicit stream number, so a
//! given `(seed, stream)` pair yields the same sequence on every platform.
//! Uniform reals use the top 53 bits of `next_u64`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream numbers below this value are reserved for per-sample streams.
pub const SAMPLE_STREAMS: u64 = 1 << 48;

/// Named streams for the non-sample consumers.
pub mod streams {
    use super::SAMPLE_STREAMS;

    pub const SPLIT: u64 = SAMPLE_STREAMS + 1;
    pub const INIT: u64 = SAMPLE_STREAMS + 2;
    pub const SHUFFLE: u64 = SAMPLE_STREAMS + 3;
    pub const SCENARIOS: u64 = SAMPLE_STREAMS + 4;
    pub const TEST_POINTS: u64 = SAMPLE_STREAMS + 5;
}

#[derive(Clone, Debug)]
pub struct Stream(ChaCha8Rng);

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift; `n > 0`).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.0.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
