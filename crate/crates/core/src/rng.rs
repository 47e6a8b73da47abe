//! Seeded randomness shared by initialization, shuffling and data generation.
//!
//! Every stream is xoshiro256** seeded through splitmix64 (the
//! `seed_from_u64` of `rand_xoshiro`). The conversions below are written out
//! so another implementation can reproduce the exact same draws:
//!
//! * `unit_f64`: `(next_u64() >> 11) * 2^-53`, a value in `[0, 1)`.
//! * `below(n)`: `(next_u64() as u128 * n) >> 64` (multiply-high, no
//!   rejection step).
//! * `standard_normal`: Box–Muller on two `unit_f64` draws `u1, u2`,
//!   returning `sqrt(-2 ln(1 - u1)) * cos(2π u2)`; the sine branch is
//!   discarded so every normal costs exactly two draws.
//! * `shuffle`: Fisher–Yates from the last index down, swapping `i` with
//!   `below(i + 1)`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub struct SeededRng {
    inner: Xoshiro256StarStar,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.unit_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.unit_f64();
        let u2 = self.unit_f64();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Derives an independent seed for a sub-stream (a round, a host, a class
/// pool) from a base seed. One splitmix64 step over `base ^ stream`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = (base ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
