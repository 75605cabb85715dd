//! Counter-based, splittable random streams.
//!
//! Every stream is a `(key, counter)` pair. The `i`-th draw of a stream is
//!
//! ```text
//! out_i = mix64(key + (i + 1) * 0x9E37_79B9_7F4A_7C15)      (wrapping arithmetic)
//! ```
//!
//! where `mix64` is the SplitMix64 finalizer:
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
//! z = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! A root stream for seed `s` has `key = mix64(s ^ 0x6D75_6C74_6961_7567)`.
//! Splitting by an integer tag `t` yields `key' = mix64(key ^ mix64(t + 0xA076_1D64_78BD_642F))`
//! with the counter reset to zero; splitting by name uses the 64-bit FNV-1a hash
//! of the UTF-8 bytes as the tag. Splitting never advances the parent.
//!
//! Derived quantities:
//! * `next_f64` = `(out >> 11) * 2^-53`, uniform on `[0, 1)`.
//! * `below(n)` = high 64 bits of `out * n` (128-bit product).
//! * `shuffle` is Fisher–Yates from the last index down, using `below(i + 1)`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const ROOT_SALT: u64 = 0x6D75_6C74_6961_7567;
const SPLIT_SALT: u64 = 0xA076_1D64_78BD_642F;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomStream {
    key: u64,
    counter: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ ROOT_SALT),
            counter: 0,
        }
    }

    pub fn split(&self, tag: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(tag.wrapping_add(SPLIT_SALT))),
            counter: 0,
        }
    }

    pub fn split_named(&self, name: &str) -> Self {
        self.split(fnv1a(name.as_bytes()))
    }

    /// Number of values drawn so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`. `n` must be non-zero.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        lo + self.below((hi - lo) as usize + 1) as i64
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Standard normal via Box–Muller (one value per two uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // Reference outputs of the SplitMix64 generator seeded with 0.
        let mut state = 0u64;
        let mut next = || {
            state = state.wrapping_add(GOLDEN);
            mix64(state)
        };
        assert_eq!(next(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(next(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn replay_is_identical() {
        let mut a = RandomStream::new(7);
        let mut b = RandomStream::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_does_not_advance_parent() {
        let root = RandomStream::new(1);
        let child_a = root.split(3);
        let child_b = root.split(3);
        assert_eq!(child_a, child_b);
        assert_eq!(root.position(), 0);
        assert_ne!(root.split(3), root.split(4));
        assert_ne!(root.split_named("epoch"), root.split_named("sample"));
    }

    #[test]
    fn uniform_bounds_and_mean() {
        let mut r = RandomStream::new(11);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let u = r.next_f64();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        assert!((sum / 10_000.0 - 0.5).abs() < 0.02);
        for _ in 0..1000 {
            assert!(r.below(5) < 5);
            let v = r.range_inclusive(-3, 3);
            assert!((-3..=3).contains(&v));
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut r = RandomStream::new(2);
        let mut v: Vec<usize> = (0..50).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, (0..50).collect::<Vec<_>>());
    }
}
