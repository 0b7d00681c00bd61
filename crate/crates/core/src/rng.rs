//! Counter-based splittable random number generator.
//!
//! Every random draw is a pure function of `(seed, counter)`, so any stream
//! can be reproduced from its two words and child streams can be derived
//! without consuming draws from the parent. This is what makes runs
//! bit-reproducible: data generation, parameter init, shuffling, and dropout
//! each own an independent stream derived by a fixed label, so adding draws
//! to one never perturbs another.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer applied to `seed + counter * GOLDEN`.
fn mix(seed: u64, counter: u64) -> u64 {
    let mut z = seed.wrapping_add(counter.wrapping_mul(GOLDEN));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed, self.counter)
    }

    /// Child stream derived from a label; does not advance this stream.
    /// Distinct labels give statistically independent streams.
    pub fn derive(&self, label: u64) -> RngState {
        RngState::new(mix(self.seed ^ GOLDEN, label.wrapping_add(self.counter)))
    }

    /// Child stream that consumes one draw from this stream.
    pub fn split(&mut self) -> RngState {
        RngState::new(self.next_u64())
    }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller. Uses two uniforms per call; the
    /// cosine branch only, so draws stay one-to-one with counter advances.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        // 1 - u in (0, 1] keeps the log argument away from zero.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        mean + std * r * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is negligible for desk-scale n against a 64-bit draw.
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
