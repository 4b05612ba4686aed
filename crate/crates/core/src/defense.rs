//! User-level Gaussian perturbation of training users' interaction rows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Interactions;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub sensitivity: f64,
    pub seed: u64,
}

impl DpConfig {
    /// `delta = 1e-5`, unit sensitivity.
    pub fn with_epsilon(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            delta: 1e-5,
            sensitivity: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if !(self.sensitivity > 0.0 && self.sensitivity.is_finite()) {
            return Err(Error::InvalidArgument("sensitivity must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Gaussian-mechanism scale `sqrt(2 ln(1.25 / delta)) * sensitivity / epsilon`.
/// An infinite epsilon gives zero noise.
pub fn gaussian_sigma(cfg: &DpConfig) -> Result<f64> {
    cfg.validate()?;
    Ok((2.0 * (1.25 / cfg.delta).ln()).sqrt() * cfg.sensitivity / cfg.epsilon)
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every cell of each listed user's row
/// (dense over the item universe) and clips to `[0, 1]`. Other rows are left
/// untouched. Each row draws from its own stream of the seeded generator.
pub fn perturb_member_interactions<T: Scalar>(
    interactions: &Interactions<T>,
    members: &[usize],
    cfg: &DpConfig,
) -> Result<Interactions<T>> {
    let sigma = gaussian_sigma(cfg)?;
    if let Some(&bad) = members.iter().find(|&&u| u >= interactions.num_users()) {
        return Err(Error::InvalidArgument(format!("member {bad} is not a user")));
    }
    if sigma == 0.0 {
        return Ok(interactions.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut matrix = interactions.matrix().clone();
    for &u in members {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u as u64);
        let dense = interactions.matrix().dense_row(u);
        let row: Vec<(usize, T)> = dense
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| {
                let noisy = (v.to_f64_lossy() + normal.sample(&mut rng)).clamp(0.0, 1.0);
                (noisy > 0.0).then(|| (i, T::of(noisy)))
            })
            .collect();
        matrix.replace_row(u, row);
    }
    Ok(interactions.with_matrix(matrix))
}
