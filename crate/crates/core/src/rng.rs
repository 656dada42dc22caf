//! Small deterministic PRNG used everywhere a seed appears in this crate.
//!
//! Training reproducibility (reference vs. distributed equivalence, checkpoint
//! resume, byte-identical report regeneration) depends on every random choice
//! being a pure function of a `u64` seed, so we pin the generator here instead
//! of depending on an external crate whose stream might change between
//! versions. The core is splitmix64, which is also used to derive sub-seeds
//! from (seed, tag, indices) tuples.

/// splitmix64 step: advances `state` and returns the next output word.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a sub-seed from a base seed and a list of context words
/// (tags, epoch/step/channel indices). Order-sensitive.
pub fn mix(base: u64, parts: &[u64]) -> u64 {
    let mut state = base;
    let mut out = splitmix64(&mut state);
    for &p in parts {
        state ^= p;
        out ^= splitmix64(&mut state).rotate_left(17);
    }
    out
}

/// Deterministic pseudo-random number generator (splitmix64 stream).
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 mantissa bits of a u64.
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is negligible for the small n used here.
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let mut u1 = self.uniform();
        if u1 <= f64::MIN_POSITIVE {
            u1 = f64::MIN_POSITIVE;
        }
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// A uniformly random permutation of 0..n, produced by argsorting
    /// i.i.d. uniform noise (ties are measure-zero; argsort is stable).
    pub fn noise_argsort(&mut self, n: usize) -> Vec<usize> {
        let noise: Vec<f64> = (0..n).map(|_| self.uniform()).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| noise[a].partial_cmp(&noise[b]).unwrap());
        idx
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
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::new(1);
        for _ in 0..1000 {
            let x = rng.uniform();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn mix_is_order_sensitive() {
        assert_ne!(mix(1, &[2, 3]), mix(1, &[3, 2]));
        assert_ne!(mix(1, &[2]), mix(2, &[2]));
        assert_eq!(mix(5, &[1, 2, 3]), mix(5, &[1, 2, 3]));
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut rng = Rng::new(42);
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn noise_argsort_is_permutation() {
        let mut rng = Rng::new(9);
        let perm = rng.noise_argsort(50);
        let mut seen = [false; 50];
        for &p in &perm {
            assert!(!seen[p]);
            seen[p] = true;
        }
    }
}
