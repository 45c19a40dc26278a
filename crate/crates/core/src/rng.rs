//! Counter-based SplitMix64 streams.
//!
//! Output `i` (zero-based) of a stream with key `k` is
//! `mix64(k + (i + 1) * 0x9E3779B97F4A7C15)` using wrapping arithmetic, where
//! `mix64` is the SplitMix64 finalizer. This is exactly the sequence of
//! Vigna's `splitmix64.c` seeded with `k`, so any implementation of that
//! reference reproduces our streams bit-for-bit. Reference vector: key
//! `1234567` yields `6457827717110365317, 3203168211198807973,
//! 9817491932198370423, 4593380528125082431, 16408922859458223821`.
//!
//! Derived quantities:
//! - `uniform()`: `(next_u64() >> 11) * 2^-53`, in `[0, 1)`.
//! - `normal()`: Box–Muller cosine branch on two consecutive outputs `a, b`:
//!   `sqrt(-2 ln(((a >> 11) + 1) * 2^-53)) * cos(2π (b >> 11) * 2^-53)`.
//! - `below(n)`: `(next_u64() as u128 * n) >> 64` (multiply-shift).
//! - `keyed(seed, purpose)`: key `mix64(seed ^ mix64(purpose + GOLDEN))`, so
//!   distinct operations sharing a user seed draw unrelated streams.

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose tags for [`Stream::keyed`]. Values are part of the stream format.
pub mod purpose {
    pub const GENERATE: u64 = 1;
    pub const DERIVE: u64 = 2;
    pub const PERMUTATION: u64 = 3;
    pub const LINEAR_MAP: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const ROW_DELETION: u64 = 6;
    pub const COL_DELETION: u64 = 7;
    pub const MASK: u64 = 8;
    pub const PRUNE: u64 = 9;
    pub const SIMNET_INIT: u64 = 10;
    pub const SIMNET_TRAIN: u64 = 11;
    pub const GENETIC: u64 = 12;
    pub const PROBES: u64 = 13;
    pub const CORPUS: u64 = 14;
    pub const STRUCTURED: u64 = 15;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(key: u64) -> Self {
        Stream { key, counter: 0 }
    }

    pub fn keyed(seed: u64, purpose: u64) -> Self {
        Stream::new(mix64(seed ^ mix64(purpose.wrapping_add(GOLDEN_GAMMA))))
    }

    /// Independent child stream; `self` is not advanced.
    pub fn fork(&self, tag: u64) -> Self {
        Stream::keyed(self.key, tag)
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn position(&self) -> u64 {
        self.counter
    }

    /// Random access to output `index` without touching the cursor.
    #[inline]
    pub fn at(&self, index: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = self.at(self.counter);
        self.counter = self.counter.wrapping_add(1);
        out
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        let a = self.next_u64();
        let b = self.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Fisher–Yates shuffle, walking from the last index down.
    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// `k` distinct indices from `0..n`, returned ascending (partial
    /// Fisher–Yates from the front).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool.sort_unstable();
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_splitmix64() {
        let mut s = Stream::new(1234567);
        let got: Vec<u64> = (0..5).map(|_| s.next_u64()).collect();
        assert_eq!(
            got,
            vec![
                6457827717110365317,
                3203168211198807973,
                9817491932198370423,
                4593380528125082431,
                16408922859458223821,
            ]
        );
    }

    #[test]
    fn random_access_matches_sequential() {
        let mut s = Stream::keyed(9, purpose::NOISE);
        let snapshot = s.clone();
        for i in 0..32 {
            assert_eq!(snapshot.at(i), s.next_u64());
        }
        assert_eq!(s.position(), 32);
    }

    #[test]
    fn purposes_give_distinct_streams() {
        let a = Stream::keyed(7, purpose::GENERATE).at(0);
        let b = Stream::keyed(7, purpose::DERIVE).at(0);
        assert_ne!(a, b);
    }

    #[test]
    fn uniform_and_below_ranges() {
        let mut s = Stream::new(3);
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(s.below(7) < 7);
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = Stream::new(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        // 5 standard errors
        assert!(mean.abs() < 5.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn permutation_is_bijection() {
        let mut s = Stream::new(5);
        let mut p = s.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn sample_indices_distinct_sorted() {
        let mut s = Stream::new(5);
        let idx = s.sample_indices(20, 7);
        assert_eq!(idx.len(), 7);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|&i| i < 20));
    }
}
