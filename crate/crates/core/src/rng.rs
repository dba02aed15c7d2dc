//! Deterministic, platform-independent random streams.
//!
//! Each pipeline stage owns its own stream. Stage seeds are derived by
//! hashing a stage label into the base seed, and parallel workers derive
//! child seeds by index; streams are never shared between threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::tensor::{Dims, ImageTensor};

/// 64-bit FNV-1a hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; a bijective bit mixer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stage named `label` under `base`.
pub fn stage_seed(base: u64, label: &str) -> u64 {
    splitmix64(base ^ fnv1a64(label.as_bytes()))
}

/// Seed for the `index`-th child of `seed`.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// A seeded ChaCha stream. Identical seeds give identical sequences.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha12Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Fresh stream for a named pipeline stage.
    pub fn for_stage(base: u64, label: &str) -> Self {
        Self::new(stage_seed(base, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for child `index`, derived from this stream's seed.
    pub fn child(&self, index: u64) -> Self {
        Self::new(child_seed(self.seed, index))
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn normal_vec(&mut self, n: usize, sigma: f64) -> Vec<f64> {
        (0..n).map(|_| sigma * self.normal()).collect()
    }
}

/// I.i.d. zero-mean Gaussian tensor with standard deviation `sigma`.
pub fn gaussian_noise(rng: &mut SeededRng, dims: Dims, sigma: f64) -> Result<ImageTensor> {
    dims.validate()?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(crate::Error::Parameter(format!(
            "noise sigma must be finite and nonnegative, got {sigma}"
        )));
    }
    let data = rng.normal_vec(dims.len(), sigma);
    ImageTensor::new(dims, data)
}
