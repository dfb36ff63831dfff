//! Seeded pseudo-random numbers shared by every reproducible step.
//!
//! The generator is xoshiro256** seeded through SplitMix64 (the reference
//! seeding procedure of the xoshiro family). Bounded draws use rejection
//! sampling on the full 64-bit output so that a port in another language that
//! follows the same three rules reproduces plans and splits bit for bit:
//!
//! 1. `state = SplitMix64(seed)` expanded to four words,
//! 2. `next_u64` is xoshiro256**,
//! 3. `below(n)` rejects outputs `x < (2^64 - n) mod n` and returns `x mod n`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256StarStar,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { inner: Xoshiro256StarStar::seed_from_u64(seed) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    /// Uniform float in `[0, 1)` built from the top 53 bits.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// In-place Fisher-Yates shuffle, walking from the front.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        let n = items.len();
        for i in 0..n.saturating_sub(1) {
            let j = i + self.below((n - i) as u64) as usize;
            items.swap(i, j);
        }
    }

    /// Draw `k` distinct elements of `pool` without replacement, in draw order.
    pub fn sample_without_replacement<T: Clone>(&mut self, pool: &[T], k: usize) -> Vec<T> {
        let mut scratch = pool.to_vec();
        let k = k.min(scratch.len());
        for i in 0..k {
            let j = i + self.below((scratch.len() - i) as u64) as usize;
            scratch.swap(i, j);
        }
        scratch.truncate(k);
        scratch
    }
}

/// Stable 64-bit FNV-1a hash, used to derive seeds from identifiers.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
