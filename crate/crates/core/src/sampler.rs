//! Seeded batch selection.
//!
//! The generator is ChaCha8 (`rand_chacha`), seeded with `seed_from_u64`, so
//! batch sequences are identical across platforms for a given seed.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplerError {
    #[error("batch of {size} requested from {n_samples} samples without replacement")]
    BatchTooLarge { size: usize, n_samples: usize },
    #[error("batch size must be at least 1")]
    ZeroBatch,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    WithReplacement,
    #[default]
    WithoutReplacement,
}

#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
    mode: SamplingMode,
    n_samples: usize,
}

impl Sampler {
    pub fn new(seed: u64, mode: SamplingMode, n_samples: usize) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            mode,
            n_samples,
        }
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Draws `size` indices uniformly; the result is sorted so downstream
    /// reductions run in a fixed order.
    pub fn draw_batch(&mut self, size: usize) -> Result<Vec<usize>, SamplerError> {
        if size == 0 {
            return Err(SamplerError::ZeroBatch);
        }
        let mut batch = match self.mode {
            SamplingMode::WithReplacement => (0..size).map(|_| self.rng.random_range(0..self.n_samples)).collect(),
            SamplingMode::WithoutReplacement => {
                if size > self.n_samples {
                    return Err(SamplerError::BatchTooLarge {
                        size,
                        n_samples: self.n_samples,
                    });
                }
                if size == self.n_samples {
                    (0..size).collect()
                } else {
                    index::sample(&mut self.rng, self.n_samples, size).into_vec()
                }
            }
        };
        batch.sort_unstable();
        Ok(batch)
    }
}
