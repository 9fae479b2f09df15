//! Reproducible Gaussian noise for trajectory ensembles.
//!
//! Every trajectory draws from its own ChaCha20 stream: the generator is keyed by
//! the run seed (expanded with `SeedableRng::seed_from_u64`) and the 64-bit
//! stream id is set to the trajectory index. Streams never overlap, so a
//! trajectory's noise depends only on `(seed, index)` and not on how the
//! ensemble is scheduled across threads.
//!
//! Standard normals come from the Marsaglia polar method, fed with 53-bit
//! uniforms; the second variate of each accepted pair is cached.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    /// Uniform on (−1, 1).
    fn symmetric_uniform(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        (bits as f64) * (2.0 / (1u64 << 53) as f64) - 1.0
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = self.symmetric_uniform();
            let v = self.symmetric_uniform();
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * factor);
                return u * factor;
            }
        }
    }

    /// Fills `out` with independent N(0, variance) samples.
    pub fn fill_normal(&mut self, out: &mut [f64], variance: f64) {
        let sd = variance.sqrt();
        for x in out.iter_mut() {
            *x = sd * self.standard_normal();
        }
    }
}
