use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
    pub validation_fraction_of_train: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { seed: 0, train_fraction: 0.8, validation_fraction_of_train: 0.2 }
    }
}

impl SplitSpec {
    /// Partition sizes `(train, validation, test)` for `n` trajectories.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction_of_train) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction_of_train must lie in [0, 1), got {}",
                self.validation_fraction_of_train
            )));
        }
        let n_train_total = (self.train_fraction * n as f64).round() as usize;
        let n_val = (self.validation_fraction_of_train * n_train_total as f64).round() as usize;
        let n_train = n_train_total.saturating_sub(n_val);
        let n_test = n.saturating_sub(n_train_total);
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(Error::InvalidConfig(format!(
                "split of {n} trajectories yields an empty partition (train {n_train}, validation {n_val}, test {n_test})"
            )));
        }
        Ok((n_train, n_val, n_test))
    }
}

/// Splits by trajectory into `(train, validation, test)`.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let (n_train, n_val, _) = spec.sizes(ds.len())?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let part = |range: std::ops::Range<usize>| {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        ds.with_trajectories(idx.into_iter().map(|i| ds.trajectories[i].clone()).collect())
    };
    let train = part(0..n_train);
    let val = part(n_train..n_train + n_val);
    let test = part(n_train + n_val..ds.len());
    Ok((train, val, test))
}
