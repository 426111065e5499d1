//! Seeded pseudo-random source shared by the generator, splitter and trainer.
//!
//! The engine is xoshiro256++ seeded through SplitMix64, so a fixture can be
//! regenerated in any language from the update equations alone:
//!
//! ```text
//! SplitMix64 (seeding, four draws fill s[0..4]):
//!     x += 0x9E3779B97F4A7C15
//!     z  = x
//!     z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!     z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!     out = z ^ (z >> 31)
//!
//! xoshiro256++ (one step):
//!     out  = rotl(s0 + s3, 23) + s0
//!     t    = s1 << 17
//!     s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3
//!     s2 ^= t;  s3 = rotl(s3, 45)
//! ```
//!
//! Uniform reals take the top 53 bits: `(out >> 11) * 2^-53`, giving `[0, 1)`.
//! Standard normals use the cosine branch of Box-Muller with
//! `u1 = 1 - uniform()` (so `u1` lies in `(0, 1]`) and `u2 = uniform()`:
//! `z = sqrt(-2 ln u1) * cos(2 pi u2)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256PlusPlus,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi]` (the upper end is reached only through rounding).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Fisher-Yates shuffle driven by [`SeededRng::below`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Draws `count` distinct values from `0..n` in draw order.
    pub fn sample_distinct(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n, "cannot draw {count} distinct values from {n}");
        // Partial Fisher-Yates over an index table.
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_seeding_matches_reference_vector() {
        // First output of xoshiro256++ seeded by SplitMix64(0), computed from
        // the update equations in the module docs.
        fn splitmix(x: &mut u64) -> u64 {
            *x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = *x;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        }
        let mut x = 0u64;
        let s: Vec<u64> = (0..4).map(|_| splitmix(&mut x)).collect();
        let expected = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        assert_eq!(SeededRng::new(0).next_u64(), expected);
    }

    #[test]
    fn uniform_stays_in_unit_interval() {
        let mut rng = SeededRng::new(11);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_are_plausible() {
        let mut rng = SeededRng::new(3);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn distinct_samples_are_distinct() {
        let mut rng = SeededRng::new(5);
        let mut picks = rng.sample_distinct(50, 50);
        picks.sort_unstable();
        assert_eq!(picks, (0..50).collect::<Vec<_>>());
    }
}
