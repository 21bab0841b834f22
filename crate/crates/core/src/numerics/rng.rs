//! Seeded pseudorandom generator.
//!
//! The generator is xoshiro256** (Blackman & Vigna). Its 256-bit state
//! `s[0..4]` is filled from the 64-bit seed by four SplitMix64 outputs:
//!
//! ```text
//! z = (x += 0x9e3779b97f4a7c15)
//! z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//! z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//! out = z ^ (z >> 31)
//! ```
//!
//! and each step produces `rotl(s[1] * 5, 7) * 9`, then updates
//!
//! ```text
//! t = s[1] << 17
//! s[2] ^= s[0]; s[3] ^= s[1]; s[1] ^= s[2]; s[0] ^= s[3]
//! s[2] ^= t;    s[3] = rotl(s[3], 45)
//! ```
//!
//! Uniform reals are `(next_u64 >> 11) · 2⁻⁵³` in `[0, 1)`. Bounded integers
//! use the multiply-shift map `(next_u64 · n) >> 64`. Shuffles are
//! Fisher–Yates from the last index down. A reimplementation following these
//! rules reproduces every initialization bit for bit.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Clone, Debug)]
pub struct SeededRng(Xoshiro256StarStar);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(Xoshiro256StarStar::seed_from_u64(seed))
    }

    /// Independent stream for `(seed, stream)`; used to give each epoch or
    /// example its own reproducible randomness.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mixed = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17);
        SeededRng::new(mixed)
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Integer in `[0, n)`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.0.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

impl RngCore for SeededRng {
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
