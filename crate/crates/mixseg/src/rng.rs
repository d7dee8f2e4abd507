//! Deterministic counter-based random number generation.
//!
//! Every randomized operation in this crate takes an explicit [`Rng`] owned by
//! the caller; there is no global random state. The generator is a SplitMix64
//! counter: the state advances by a fixed increment per draw and the output is
//! a bijective mix of the counter, so identical seeds produce identical draw
//! sequences on every platform. Parallel work forks independent child streams
//! with [`Rng::fork`] instead of sharing a generator.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer. Bijective on u64.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream id.
pub fn derive_seed(parent_seed: u64, stream_id: u64) -> u64 {
    mix64(parent_seed ^ mix64(stream_id.wrapping_add(GAMMA)))
}

/// Deterministic counter-based generator (SplitMix64).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, state: seed }
    }

    /// The seed this generator was constructed with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fork an independent child stream. Children of the same parent with
    /// distinct stream ids never overlap in practice; the child seed is
    /// `derive_seed(parent_seed, stream_id)` regardless of how many draws the
    /// parent has made.
    pub fn fork(&self, stream_id: u64) -> Rng {
        Rng::new(derive_seed(self.seed, stream_id))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`, unbiased (Lemire multiply-shift with
    /// rejection). Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        let mut x = self.next_u64();
        let mut m = (x as u128) * (n as u128);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                x = self.next_u64();
                m = (x as u128) * (n as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Approximately standard-normal deviate: sum of 12 uniforms minus 6
    /// (Irwin-Hall). Chosen over Box-Muller so dataset generation stays
    /// byte-identical across platforms (no libm calls).
    pub fn normal(&mut self) -> f64 {
        let mut acc = 0.0;
        for _ in 0..12 {
            acc += self.next_f64();
        }
        acc - 6.0
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }

    /// Sample `k` distinct values from `0..n` by partial Fisher-Yates.
    /// Exactly `k` calls to [`Rng::below`] are made; the result order is the
    /// draw order. Panics if `k > n`.
    pub fn choose_k(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_give_equal_sequences() {
        let mut a = Rng::new(0xDEAD_BEEF);
        let mut b = Rng::new(0xDEAD_BEEF);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_seeds_diverge() {
        let mut a = Rng::new(1);
        let mut b = Rng::new(2);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn fork_is_deterministic_and_independent_of_parent_position() {
        let parent = Rng::new(77);
        let mut advanced = parent.clone();
        for _ in 0..100 {
            advanced.next_u64();
        }
        assert_eq!(parent.fork(3), advanced.fork(3));
        assert_ne!(parent.fork(3), parent.fork(4));
    }

    #[test]
    fn below_is_in_range_and_roughly_uniform() {
        let mut rng = Rng::new(42);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let v = rng.below(4);
            assert!(v < 4);
            counts[v as usize] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / 10_000.0;
            assert!((0.23..=0.27).contains(&freq), "freq {freq}");
        }
    }

    #[test]
    fn next_f64_in_unit_interval() {
        let mut rng = Rng::new(9);
        for _ in 0..1000 {
            let v = rng.next_f64();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn choose_k_yields_distinct_values_in_range() {
        let mut rng = Rng::new(5);
        for _ in 0..200 {
            let picked = rng.choose_k(7, 3);
            assert_eq!(picked.len(), 3);
            let mut sorted = picked.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 3);
            assert!(picked.iter().all(|&v| v < 7));
        }
    }

    #[test]
    fn normal_has_plausible_moments() {
        let mut rng = Rng::new(11);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Rng::new(3);
        let mut xs: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(xs, (0..50).collect::<Vec<_>>());
    }
}
