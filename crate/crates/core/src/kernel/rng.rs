//! Deterministic pseudo-random numbers: xoshiro256** seeded through splitmix64.
//!
//! The whole generator is specified here so that a `(seed, stream)` pair yields
//! the same sequence on every platform and in every reimplementation.

use serde::{Deserialize, Serialize};

const STREAM_SALT: u64 = 0xD1B5_4A32_D192_ED03;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xoshiro256** generator bound to a stream id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    state: [u64; 4],
    stream: u64,
}

impl Rng {
    /// Expands `(seed, stream)` into a generator state.
    ///
    /// Word `i` is the XOR of the `i`-th splitmix64 output seeded with `seed`
    /// and the `i`-th output seeded with `stream ^ STREAM_SALT`. An all-zero
    /// expansion is retried with `seed + 1`.
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut seed = seed;
        loop {
            let mut a = seed;
            let mut b = stream ^ STREAM_SALT;
            let mut state = [0u64; 4];
            for word in state.iter_mut() {
                *word = splitmix64(&mut a) ^ splitmix64(&mut b);
            }
            if state.iter().any(|&w| w != 0) {
                return Rng { state, stream };
            }
            seed = seed.wrapping_add(1);
        }
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn state(&self) -> [u64; 4] {
        self.state
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n` by 128-bit multiply-shift.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// `n` standard-normal draws. Each pair consumes two uniforms `u`, `v` and
    /// maps `(1 - u, v)` through [`box_muller`]; an odd tail discards the
    /// second value of its pair.
    pub fn standard_normal(&mut self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            let u1 = 1.0 - self.uniform();
            let u2 = self.uniform();
            let (a, b) = box_muller(u1, u2);
            out.push(a);
            out.push(b);
        }
        out.truncate(n);
        out
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal(1)[0]
    }
}

/// Box–Muller transform of `u1 ∈ (0, 1]`, `u2 ∈ [0, 1)`.
#[inline]
pub fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}
