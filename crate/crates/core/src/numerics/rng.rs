use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

/// Seeded pseudo-random generator.
///
/// The stream is ChaCha with 8 rounds, keyed by `rand_core`'s
/// `seed_from_u64` expansion of the 64-bit seed. It is platform independent,
/// so a seed fully determines every initialization, shuffle and toy corpus.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator for sub-stream `stream` of `seed`.
    pub fn derived(seed: u64, stream: u64) -> Self {
        // splitmix64 finalizer so neighbouring streams do not share key bits
        let mut z = seed ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Self::new(z)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Standard normal sample.
    pub fn normal<T: Scalar>(&mut self) -> T {
        let v: f64 = self.inner.sample(StandardNormal);
        T::lit(v)
    }

    /// Uniform sample in `[lo, hi)`.
    pub fn uniform<T: Scalar>(&mut self, lo: T, hi: T) -> T {
        let u: f64 = self.inner.random();
        lo + (hi - lo) * T::lit(u)
    }

    /// Uniform integer in `[lo, hi)`.
    pub fn below(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..hi)
    }

    pub fn coin(&mut self, p: f64) -> bool {
        self.inner.random_bool(p)
    }

    pub fn shuffle<X>(&mut self, xs: &mut [X]) {
        xs.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let xa: Vec<f64> = (0..10).map(|_| a.normal()).collect();
        let xb: Vec<f64> = (0..10).map(|_| b.normal()).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = Rng::derived(1, 0);
        let mut b = Rng::derived(1, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
