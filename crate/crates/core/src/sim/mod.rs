//! Synthetic sequential treatment data with known behavior policies.
//!
//! [`chronic`] models a chronic disease followed over a variable number of
//! visits, with sticky treatment choices and subgroup-specific treatment
//! effects. [`episodic`] models a fixed-length acute episode with a factored
//! 5 x 5 dose action space and a terminal survival reward.

pub mod chronic;
pub mod episodic;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureSchema, Features, StateEncoder, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{Policy, StateQuery};
use crate::rng::rng_for;

pub use chronic::{ChronicConfig, ChronicSimulator, ChronicTruth};
pub use episodic::{EpisodicConfig, EpisodicSimulator, EpisodicTruth};

/// What an action chooser sees at one step of a rollout.
pub struct RolloutContext<'a> {
    /// Raw covariates observed at this step.
    pub features: &'a Features,
    /// `(action, reward)` of earlier steps.
    pub history: &'a [(usize, f64)],
    /// 1-based stage index.
    pub stage: usize,
    /// Generator behavior distribution at this step.
    pub behavior: &'a [f64],
    /// Action with the best expected immediate effect for this patient.
    pub best_action: usize,
}

impl RolloutContext<'_> {
    pub fn prev_action(&self) -> Option<usize> {
        self.history.last().map(|&(a, _)| a)
    }
}

pub type Chooser<'a> = dyn Fn(&RolloutContext) -> Result<Vec<f64>> + Sync + 'a;

pub trait Simulator: Sync {
    fn n_actions(&self) -> usize;

    fn schema(&self) -> FeatureSchema;

    fn provenance(&self) -> String;

    /// One patient episode with actions drawn from `choose`.
    fn rollout(&self, rng: &mut ChaCha8Rng, choose: &Chooser) -> Result<Trajectory>;
}

/// Draws an index from a probability vector after checking it.
pub(crate) fn sample(rng: &mut ChaCha8Rng, p: &[f64], n_actions: usize) -> Result<usize> {
    if p.len() != n_actions {
        return Err(Error::DimensionMismatch { expected: n_actions, got: p.len() });
    }
    let total: f64 = p.iter().sum();
    if p.iter().any(|v| v.is_nan() || *v < 0.0) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("action distribution is not on the simplex (sum {total})")));
    }
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (a, &v) in p.iter().enumerate() {
        if v > 0.0 {
            acc += v;
            last = a;
            if u < acc {
                return Ok(a);
            }
        }
    }
    Ok(last)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Run length of the most recent action in a history.
pub(crate) fn time_on_treatment(history: &[(usize, f64)]) -> usize {
    match history.last() {
        None => 0,
        Some(&(last, _)) => history.iter().rev().take_while(|&&(a, _)| a == last).count(),
    }
}

fn patient_id(i: usize) -> String {
    format!("p{i:05}")
}

/// Generates `n` patients under the generator's own behavior policy. Each
/// patient draws from its own stream derived from `(seed, index)`, so the
/// output does not depend on thread scheduling.
pub fn generate(sim: &dyn Simulator, n: usize, seed: u64) -> Result<Dataset> {
    let behavior = |ctx: &RolloutContext| Ok(ctx.behavior.to_vec());
    let trajectories = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut t = sim.rollout(&mut rng_for(seed, i as u64), &behavior)?;
            t.id = patient_id(i);
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(sim.schema(), sim.n_actions(), trajectories, sim.provenance())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnScale {
    #[default]
    Total,
    /// Return divided by the number of stages.
    PerStage,
}

/// Mean return and its standard error over on-policy rollouts of `choose`.
pub fn monte_carlo_value(sim: &dyn Simulator, choose: &Chooser, n_rollouts: usize, seed: u64, scale: ReturnScale) -> Result<(f64, f64)> {
    if n_rollouts < 2 {
        return Err(Error::Validation("monte_carlo_value needs at least 2 rollouts".into()));
    }
    let returns = (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let t = sim.rollout(&mut rng_for(seed, i as u64), choose)?;
            Ok(match scale {
                ReturnScale::Total => t.total_return(),
                ReturnScale::PerStage => t.total_return() / t.horizon() as f64,
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Chooser that encodes each rollout step with `encoder` and queries
/// `policy`, so policies built on fitted models can be rolled out.
pub fn policy_chooser<'a>(encoder: &'a StateEncoder, policy: &'a dyn Policy) -> impl Fn(&RolloutContext) -> Result<Vec<f64>> + Sync + 'a {
    move |ctx: &RolloutContext| {
        let state = encoder.encode(ctx.features, ctx.history)?;
        policy.probabilities(&StateQuery { state: &state, prev_action: ctx.prev_action(), stage: ctx.stage })
    }
}

/// Either simulator's configuration, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimConfig {
    Chronic(ChronicConfig),
    Episodic(EpisodicConfig),
}

impl SimConfig {
    pub fn n_patients(&self) -> usize {
        match self {
            SimConfig::Chronic(c) => c.n_patients,
            SimConfig::Episodic(c) => c.n_patients,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            SimConfig::Chronic(c) => c.seed,
            SimConfig::Episodic(c) => c.seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            SimConfig::Chronic(c) => c.seed = seed,
            SimConfig::Episodic(c) => c.seed = seed,
        }
        self
    }

    pub fn simulator(&self) -> Result<Box<dyn Simulator>> {
        Ok(match self {
            SimConfig::Chronic(c) => Box::new(ChronicSimulator::new(c.clone())?),
            SimConfig::Episodic(c) => Box::new(EpisodicSimulator::new(c.clone())?),
        })
    }

    pub fn generate(&self) -> Result<Dataset> {
        generate(self.simulator()?.as_ref(), self.n_patients(), self.seed())
    }
}

/// Sidecar written next to simulated data: the full generator
/// configuration, from which the behavior policy can be recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub simulator: SimConfig,
    pub n_actions: usize,
    /// Lower bound on every behavior probability.
    pub probability_floor: f64,
    pub behavior: String,
}

impl TruthManifest {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        let sim = cfg.simulator()?;
        let (floor, behavior) = match cfg {
            SimConfig::Chronic(c) => (c.floor, chronic::BEHAVIOR_DESCRIPTION.to_string()),
            SimConfig::Episodic(c) => (c.floor, episodic::BEHAVIOR_DESCRIPTION.to_string()),
        };
        Ok(Self { simulator: cfg.clone(), n_actions: sim.n_actions(), probability_floor: floor, behavior })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sampling_respects_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(sample(&mut rng, &[0.0, 1.0, 0.0], 3).unwrap(), 1);
        }
        assert!(sample(&mut rng, &[0.5, 0.6], 2).is_err());
        assert!(sample(&mut rng, &[0.5, 0.5], 3).is_err());
    }

    #[test]
    fn run_length() {
        assert_eq!(time_on_treatment(&[]), 0);
        assert_eq!(time_on_treatment(&[(1, 0.0), (2, 0.0), (2, 0.0)]), 2);
    }
}
