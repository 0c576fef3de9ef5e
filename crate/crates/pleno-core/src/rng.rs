//! Seeded random number generation for the synthetic data pipeline.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic stream of uniform and Gaussian variates.
pub struct Rng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl Rng {
    /// Creates a stream fully determined by `seed`.
    pub fn from_seed(seed: u64) -> Self {
        Rng { inner: ChaCha8Rng::seed_from_u64(seed), spare: None }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw (Box-Muller, cached pair).
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        loop {
            let u1 = self.uniform();
            if u1 <= f64::MIN_POSITIVE {
                continue;
            }
            let u2 = self.uniform();
            let r = libm::sqrt(-2.0 * libm::log(u1));
            let a = 2.0 * core::f64::consts::PI * u2;
            self.spare = Some(r * libm::sin(a));
            return r * libm::cos(a);
        }
    }
}
