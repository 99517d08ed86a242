//! Counter-based Gaussian streams.
//!
//! Every draw is addressed by `(seed, index)`: the generator for index `i`
//! is a ChaCha8 stream selected by `i`, so sample `i` is the same whether
//! samples are produced in order, in reverse, or in parallel.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mixes two words into a well-distributed 64-bit seed (SplitMix64 finalizer).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).rotate_left(23);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Source of independent per-index random streams.
#[derive(Debug, Clone)]
pub struct CounterRng {
    base: ChaCha8Rng,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { base: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Generator dedicated to `index`.
    pub fn stream(&self, index: u64) -> GaussianStream {
        let mut rng = self.base.clone();
        rng.set_stream(index);
        rng.set_word_pos(0);
        GaussianStream { rng, spare: None }
    }

    /// Fills `out` with standard normals from stream `index`.
    pub fn fill_normal(&self, index: u64, out: &mut [f64]) {
        let mut s = self.stream(index);
        for v in out.iter_mut() {
            *v = s.next_normal();
        }
    }
}

/// Box–Muller standard normal generator over a ChaCha stream.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    /// Uniform in the open interval (0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        // 53 random bits, shifted off zero
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform integer in `0..n` (n > 0).
    pub fn next_below(&mut self, n: usize) -> usize {
        (self.next_uniform() * n as f64) as usize % n
    }
}
