//! Counter-based noise.
//!
//! Every frame's noise is drawn from its own ChaCha8 stream keyed by
//! `(seed, purpose, index)`, so any frame of any run can be regenerated
//! without replaying the frames before it. Key layout (32 bytes):
//! `seed` LE u64, `purpose` LE u64, `index` LE u64, eight zero bytes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Initial latents of a uniform-timestep batch.
    BatchInit = 1,
    /// Primer frames used to build the first queue.
    Primer = 2,
    /// Re-noising primer frames onto the diagonal.
    Renoise = 3,
    /// Fresh frames entering the tail of the queue.
    Enqueue = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, purpose: Purpose, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
        key[16..24].copy_from_slice(&index.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    pub fn fill_normal(&self, purpose: Purpose, index: u64, out: &mut [f64]) {
        let mut rng = self.rng(purpose, index);
        for v in out {
            *v = StandardNormal.sample(&mut rng);
        }
    }

    pub fn normal_frame(&self, purpose: Purpose, index: u64, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.fill_normal(purpose, index, &mut out);
        out
    }
}
