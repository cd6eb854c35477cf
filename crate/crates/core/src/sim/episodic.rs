//! Acute-episode simulator with a factored dose action space.
//!
//! Actions are pairs (fluid level, vasopressor level), each in 0..5, encoded
//! as `5 * fluid + vaso`. Every episode lasts 6 steps. The appropriate dose
//! pair grows with a severity score; clinicians favour it, with probability
//! decaying in the distance from it along each axis. Mismatched doses worsen
//! severity and raise a per-step hazard; the last step pays +100 if the
//! patient survives all hazards and -100 otherwise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{sample, sigmoid, Chooser, RolloutContext, Simulator};
use crate::data::{FeatureSchema, FeatureSpec, FeatureValue, Features, StateLayout, Step, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{Policy, StateQuery};

pub(crate) const BEHAVIOR_DESCRIPTION: &str = "p(fluid, vaso) = (1 - 25 floor) q(fluid) q(vaso) + floor with \
q(d) proportional to exp(-sharpness |d - ideal(d)|), ideal fluid = clamp(round(severity / 5), 0, 4), \
ideal vaso = clamp(round((severity - 5) / 4), 0, 4)";

pub const LEVELS: usize = 5;
pub const N_ACTIONS: usize = LEVELS * LEVELS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodicConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub horizon: usize,
    pub severity_mean: f64,
    pub severity_sd: f64,
    /// Severity change per step under the ideal doses.
    pub drift: f64,
    /// Additional severity change per level of dose mismatch.
    pub mismatch_effect: f64,
    pub severity_noise: f64,
    /// Sharpness of clinicians' preference for the ideal doses.
    pub sharpness: f64,
    pub floor: f64,
    /// Multiplies every hazard; 0 means nobody dies.
    pub hazard_scale: f64,
    pub hazard_intercept: f64,
    pub hazard_severity: f64,
    pub hazard_mismatch: f64,
}

impl Default for EpisodicConfig {
    fn default() -> Self {
        Self {
            n_patients: 2000,
            seed: 0,
            horizon: 6,
            severity_mean: 8.0,
            severity_sd: 3.5,
            drift: -0.5,
            mismatch_effect: 0.6,
            severity_noise: 1.2,
            sharpness: 2.0,
            floor: 0.004,
            hazard_scale: 1.0,
            hazard_intercept: -3.5,
            hazard_severity: 1.0,
            hazard_mismatch: 0.5,
        }
    }
}

impl EpisodicConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if !(self.floor >= 0.0 && self.floor * N_ACTIONS as f64 <= 1.0) {
            return bad("floor must lie in [0, 1/25]");
        }
        if !(0.0..=1.0).contains(&self.hazard_scale) {
            return bad("hazard_scale must lie in [0, 1]");
        }
        if self.severity_sd < 0.0 || self.severity_noise < 0.0 || self.sharpness < 0.0 {
            return bad("scales must be non-negative");
        }
        Ok(())
    }
}

pub fn split_action(a: usize) -> (usize, usize) {
    (a / LEVELS, a % LEVELS)
}

pub fn ideal_doses(severity: f64) -> (usize, usize) {
    let clamp = |v: f64| v.round().clamp(0.0, (LEVELS - 1) as f64) as usize;
    (clamp(severity / 5.0), clamp((severity - 5.0) / 4.0))
}

/// Total distance of an action from the ideal doses.
pub fn mismatch(severity: f64, a: usize) -> usize {
    let (f, v) = split_action(a);
    let (fi, vi) = ideal_doses(severity);
    f.abs_diff(fi) + v.abs_diff(vi)
}

pub struct EpisodicSimulator {
    cfg: EpisodicConfig,
}

impl EpisodicSimulator {
    pub fn new(cfg: EpisodicConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &EpisodicConfig {
        &self.cfg
    }

    pub fn behavior(&self, severity: f64) -> Vec<f64> {
        let (fi, vi) = ideal_doses(severity);
        let axis = |ideal: usize| {
            let w: Vec<f64> = (0..LEVELS).map(|d| (-self.cfg.sharpness * d.abs_diff(ideal) as f64).exp()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let (qf, qv) = (axis(fi), axis(vi));
        let scale = 1.0 - N_ACTIONS as f64 * self.cfg.floor;
        (0..N_ACTIONS)
            .map(|a| {
                let (f, v) = split_action(a);
                scale * qf[f] * qv[v] + self.cfg.floor
            })
            .collect()
    }

    /// Death hazard of one step.
    pub fn hazard(&self, severity: f64, a: usize) -> f64 {
        let c = &self.cfg;
        c.hazard_scale
            * sigmoid(c.hazard_intercept + c.hazard_severity * (severity - 8.0) / 4.0 + c.hazard_mismatch * mismatch(severity, a) as f64)
    }

    /// Probability of surviving a recorded trajectory given its severities
    /// and actions.
    pub fn survival_probability(&self, t: &Trajectory) -> Result<f64> {
        t.steps.iter().try_fold(1.0, |acc, s| {
            let sev = s
                .feature("severity")
                .and_then(FeatureValue::as_number)
                .ok_or_else(|| Error::Schema("episodic trajectory lacks `severity`".into()))?;
            Ok(acc * (1.0 - self.hazard(sev, s.action)))
        })
    }

    fn features(severity: f64, lactate: f64, map: f64, age: f64) -> Features {
        let mut f = Features::new();
        f.insert("severity".into(), Some(FeatureValue::Number(severity)));
        f.insert("lactate".into(), Some(FeatureValue::Number(lactate)));
        f.insert("map".into(), Some(FeatureValue::Number(map)));
        f.insert("age".into(), Some(FeatureValue::Number(age)));
        f
    }
}

impl Simulator for EpisodicSimulator {
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            features: vec![
                FeatureSpec::numeric("severity"),
                FeatureSpec::numeric("lactate"),
                FeatureSpec::numeric("map"),
                FeatureSpec::numeric("age"),
            ],
        }
    }

    fn provenance(&self) -> String {
        format!("episodic simulator, seed {}", self.cfg.seed)
    }

    fn rollout(&self, rng: &mut ChaCha8Rng, choose: &Chooser) -> Result<Trajectory> {
        let c = &self.cfg;
        let std: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
        let age = (62.0 + 15.0 * std.sample(rng)).clamp(18.0, 95.0);
        let mut severity = (c.severity_mean + c.severity_sd * std.sample(rng)).clamp(0.0, 24.0);
        let mut history: Vec<(usize, f64)> = Vec::with_capacity(c.horizon);
        let mut steps = Vec::with_capacity(c.horizon);
        let mut alive = 1.0;
        for stage in 1..=c.horizon {
            let lactate = (1.0 + 0.3 * severity + 0.5 * std.sample(rng)).max(0.1);
            let map = 85.0 - 1.5 * severity + 5.0 * std.sample(rng);
            let features = Self::features(severity, lactate, map, age);
            let mu = self.behavior(severity);
            let (fi, vi) = ideal_doses(severity);
            let ctx = RolloutContext {
                features: &features,
                history: &history,
                stage,
                behavior: &mu,
                best_action: fi * LEVELS + vi,
            };
            let pi = choose(&ctx)?;
            let a = sample(rng, &pi, N_ACTIONS)?;
            alive *= 1.0 - self.hazard(severity, a);
            let reward = if stage == c.horizon {
                if rng.gen::<f64>() < alive {
                    100.0
                } else {
                    -100.0
                }
            } else {
                0.0
            };
            let next = severity + c.drift + c.mismatch_effect * mismatch(severity, a) as f64 + c.severity_noise * std.sample(rng);
            history.push((a, reward));
            steps.push(Step { features, action: a, reward });
            severity = next.clamp(0.0, 24.0);
        }
        Ok(Trajectory { id: String::new(), steps })
    }
}

/// The generator's behavior policy read off encoded state vectors.
pub struct EpisodicTruth {
    sim: EpisodicSimulator,
    severity: usize,
}

impl EpisodicTruth {
    pub fn new(cfg: EpisodicConfig, layout: &StateLayout) -> Result<Self> {
        let severity = layout
            .index_of("severity")
            .ok_or_else(|| Error::Schema("state layout lacks `severity`".into()))?;
        Ok(Self { sim: EpisodicSimulator::new(cfg)?, severity })
    }
}

impl Policy for EpisodicTruth {
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn probabilities(&self, q: &StateQuery) -> Result<Vec<f64>> {
        let sev = *q
            .state
            .get(self.severity)
            .ok_or(Error::DimensionMismatch { expected: self.severity + 1, got: q.state.len() })?;
        Ok(self.sim.behavior(sev))
    }
}
