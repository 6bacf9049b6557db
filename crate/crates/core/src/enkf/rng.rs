//! Deterministic random streams shared by server and client.
//!
//! The generator is MT19937 (32-bit Mersenne Twister). Seeding from a `u64`
//! and the uniform/normal draws follow CPython's `random` module, so a
//! stream seeded with `s` yields the same `random()` / `gauss()` sequence as
//! `random.Random(s)` in Python.

use std::f64::consts::TAU;

const N: usize = 624;
const M: usize = 397;
const MATRIX_A: u32 = 0x9908_b0df;
const UPPER_MASK: u32 = 0x8000_0000;
const LOWER_MASK: u32 = 0x7fff_ffff;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone)]
pub struct Mt19937 {
    state: [u32; N],
    index: usize,
}

impl std::fmt::Debug for Mt19937 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mt19937").field("index", &self.index).finish_non_exhaustive()
    }
}

impl Mt19937 {
    /// Reference `init_genrand`.
    pub fn new(seed: u32) -> Self {
        let mut state = [0u32; N];
        state[0] = seed;
        for i in 1..N {
            let prev = state[i - 1];
            state[i] = 1_812_433_253u32
                .wrapping_mul(prev ^ (prev >> 30))
                .wrapping_add(i as u32);
        }
        Self { state, index: N }
    }

    /// Reference `init_by_array`.
    pub fn with_key(key: &[u32]) -> Self {
        let mut mt = Self::new(19_650_218);
        let s = &mut mt.state;
        let mut i = 1usize;
        let mut j = 0usize;
        let klen = key.len().max(1);
        for _ in 0..N.max(klen) {
            let prev = s[i - 1];
            let k = key.get(j).copied().unwrap_or(0);
            s[i] = (s[i] ^ (prev ^ (prev >> 30)).wrapping_mul(1_664_525))
                .wrapping_add(k)
                .wrapping_add(j as u32);
            i += 1;
            j += 1;
            if i >= N {
                s[0] = s[N - 1];
                i = 1;
            }
            if j >= klen {
                j = 0;
            }
        }
        for _ in 0..N - 1 {
            let prev = s[i - 1];
            s[i] = (s[i] ^ (prev ^ (prev >> 30)).wrapping_mul(1_566_083_941))
                .wrapping_sub(i as u32);
            i += 1;
            if i >= N {
                s[0] = s[N - 1];
                i = 1;
            }
        }
        s[0] = 0x8000_0000;
        mt
    }

    /// Seeds like CPython's `random.seed(int)`: the 32-bit words of the
    /// seed, least significant first.
    pub fn from_u64(seed: u64) -> Self {
        let lo = seed as u32;
        let hi = (seed >> 32) as u32;
        if hi == 0 {
            Self::with_key(&[lo])
        } else {
            Self::with_key(&[lo, hi])
        }
    }

    fn twist(&mut self) {
        for i in 0..N {
            let y = (self.state[i] & UPPER_MASK) | (self.state[(i + 1) % N] & LOWER_MASK);
            let mut next = self.state[(i + M) % N] ^ (y >> 1);
            if y & 1 != 0 {
                next ^= MATRIX_A;
            }
            self.state[i] = next;
        }
        self.index = 0;
    }

    pub fn next_u32(&mut self) -> u32 {
        if self.index >= N {
            self.twist();
        }
        let mut y = self.state[self.index];
        self.index += 1;
        y ^= y >> 11;
        y ^= (y << 7) & 0x9d2c_5680;
        y ^= (y << 15) & 0xefc6_0000;
        y ^ (y >> 18)
    }

    /// Uniform in `[0, 1)` with 53-bit resolution (`genrand_res53`).
    pub fn next_f64(&mut self) -> f64 {
        let a = (self.next_u32() >> 5) as f64;
        let b = (self.next_u32() >> 6) as f64;
        (a * 67_108_864.0 + b) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform integer in `0..bound` by rejection on the top bits.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0 && bound <= u32::MAX as usize);
        let bits = usize::BITS - (bound - 1).leading_zeros();
        loop {
            let r = if bits == 0 { 0 } else { (self.next_u32() >> (32 - bits)) as usize };
            if r < bound {
                return r;
            }
        }
    }
}

/// Standard normal draws via Box–Muller in the pairing used by CPython's
/// `random.gauss`: each pair of uniforms yields a cosine draw, and the
/// sine draw is cached for the next call.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    mt: Mt19937,
    cached: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            mt: Mt19937::from_u64(seed),
            cached: None,
        }
    }

    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.cached.take() {
            return z;
        }
        let angle = self.mt.next_f64() * TAU;
        let radius = (-2.0 * (1.0 - self.mt.next_f64()).ln()).sqrt();
        self.cached = Some(angle.sin() * radius);
        angle.cos() * radius
    }
}

/// Derives per-step seeds from the session's basic seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedPolicy {
    pub basic_seed: u64,
}

impl SeedPolicy {
    pub fn new(basic_seed: u64) -> Self {
        Self { basic_seed }
    }

    /// `avalanche(basic_seed ^ step * 0x9E3779B97F4A7C15)` with the
    /// SplitMix64 finalizer as the avalanche.
    pub fn derive(&self, step: u64) -> u64 {
        mix64(self.basic_seed ^ step.wrapping_mul(GOLDEN_GAMMA))
    }
}

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_vectors() {
        let mut mt = Mt19937::new(5489);
        assert_eq!(mt.next_u32(), 3_499_211_612);

        let mut mt = Mt19937::with_key(&[0x123, 0x234, 0x345, 0x456]);
        let first: Vec<u32> = (0..5).map(|_| mt.next_u32()).collect();
        assert_eq!(first, [1_067_595_299, 955_945_823, 477_289_528, 4_107_218_783, 4_228_976_476]);
    }

    #[test]
    fn matches_cpython_random() {
        // random.Random(42).random()
        let mut mt = Mt19937::from_u64(42);
        assert_eq!(mt.next_f64(), 0.6394267984578837);
        let mut mt = Mt19937::from_u64(12_345_678_901_234_567);
        assert_eq!(mt.next_f64(), 0.09702702310935107);

        // random.Random(2**40 + 5).gauss(0, 1), three draws
        let mut g = GaussianStream::new((1 << 40) + 5);
        for want in [-0.7906503216763192, -0.021765946505731208, 1.0991312652276808] {
            let got = g.next_standard();
            assert!((got - want).abs() <= 1e-15 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn derive_is_pure_and_spreads() {
        let p = SeedPolicy::new(7);
        assert_eq!(p.derive(3), p.derive(3));
        assert_ne!(p.derive(3), p.derive(4));
        assert_ne!(p.derive(0), SeedPolicy::new(8).derive(0));
        assert_eq!(mix64(0), 0);
    }

    #[test]
    fn below_stays_in_range() {
        let mut mt = Mt19937::new(1);
        for bound in [1, 2, 3, 1089, 4225] {
            for _ in 0..200 {
                assert!(mt.below(bound) < bound);
            }
        }
    }

    #[test]
    fn gaussian_moments() {
        let mut g = GaussianStream::new(99);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| g.next_standard()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 5.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }
}
