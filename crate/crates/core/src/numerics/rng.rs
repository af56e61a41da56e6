//! Named, reproducible random streams.
//!
//! Every stochastic draw goes through an [`RngStream`] backed by ChaCha20,
//! a counter-based generator with a 64-bit seed, a 64-bit stream id and a
//! word-position counter. The stream id is derived from a stable hash of the
//! stream name, so `(seed, name)` pins the draw sequence on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub const NOISE: &str = "noise";
pub const GATE_EPSILON: &str = "gate-epsilon";
pub const GATE_UNIFORM: &str = "gate-uniform";
pub const INIT: &str = "init";
pub const COND_DROP: &str = "cond-drop";
pub const TIMESTEP: &str = "timestep";

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub const ALGORITHM: &'static str = "chacha20";

    pub fn new(seed: u64, name: &str) -> Self {
        Self::with_stream(seed, fnv1a(name.as_bytes()))
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    /// Independent child stream, e.g. one per gated layer.
    pub fn substream(&self, index: u64) -> Self {
        Self::with_stream(self.seed, mix(self.stream ^ mix(index)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Position in the 32-bit word sequence of the stream.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Standard logistic draw by inverse CDF: `ln u - ln(1 - u)`.
    pub fn logistic(&mut self) -> f64 {
        let u = self.uniform_open();
        u.ln() - (1.0 - u).ln()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }
}
