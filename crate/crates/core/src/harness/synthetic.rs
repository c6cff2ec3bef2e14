//! Seeded synthetic classification logits.
//!
//! Class means sit on a sphere of radius `separation` in `dim` dimensions.
//! An instance of class `y` is `x = μ_y + ε` with `ε ~ N(0, I)`, and its
//! logits are `z_k = ⟨x, μ_k⟩`, the Bayes-optimal scores up to a shared
//! constant when all means have equal norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activations::LogitVector;
use crate::conformal::LabeledLogitDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTask {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for GaussianTask {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 16,
            separation: 2.5,
            seed: 0,
        }
    }
}

impl GaussianTask {
    /// Draws `n` labeled instances with uniformly random labels.
    pub fn sample(&self, n: usize) -> Result<LabeledLogitDataset> {
        if self.classes < 2
            || self.dim == 0
            || !self.separation.is_finite()
            || self.separation <= 0.0
        {
            return Err(Error::InvalidInput(format!(
                "invalid synthetic task {self:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let means: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x * self.separation / norm).collect()
            })
            .collect();

        let mut instances = Vec::with_capacity(n);
        for _ in 0..n {
            let y = rng.gen_range(0..self.classes);
            let x: Vec<f64> = means[y]
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let z = means
                .iter()
                .map(|mu| mu.iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect();
            instances.push((LogitVector::new(z)?, y));
        }
        LabeledLogitDataset::new(instances)
    }
}
