//! Chronic-disease simulator.
//!
//! Each patient belongs to a latent subgroup, partly revealed by a noisy
//! biomarker, and is followed for 3-6 visits. A disease index in [0, 76]
//! moves by a subgroup- and treatment-specific effect plus noise; the reward
//! of a visit is `10 - next index`. Clinicians pick a first treatment from
//! age-dependent preferences, then mostly stay on it, switching more often
//! when the disease is active and choosing the new treatment by biomarker.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{sample, sigmoid, softmax, time_on_treatment, Chooser, RolloutContext, Simulator};
use crate::data::{FeatureSchema, FeatureSpec, FeatureValue, Features, StateLayout, Step, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{Policy, StateQuery};

pub(crate) const BEHAVIOR_DESCRIPTION: &str = "stage 1: softmax(baseline_logits + baseline_age_slopes * (age - 55) / 10); \
later stages: stay with probability 1 - ps, ps = sigmoid(switch_intercept + switch_index_slope * (index - 25) / 10 \
+ switch_time_slope * (time_on_treatment - 1) [+ hidden_strength * group]), otherwise switch to b != prev with \
probability proportional to exp(target_logits[b] + target_marker_slopes[b] * (marker - 0.5)); \
finally p = (1 - K floor) p + floor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChronicConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub n_actions: usize,
    pub horizon_min: usize,
    pub horizon_max: usize,
    /// Probability of belonging to subgroup 1.
    pub group_probability: f64,
    /// Standard deviation of the biomarker around the subgroup id.
    pub marker_noise: f64,
    pub initial_index_mean: f64,
    pub initial_index_sd: f64,
    /// Per-subgroup, per-action change of the disease index per visit.
    pub effects: [Vec<f64>; 2],
    pub index_noise: f64,
    pub baseline_logits: Vec<f64>,
    pub baseline_age_slopes: Vec<f64>,
    pub switch_intercept: f64,
    pub switch_index_slope: f64,
    pub switch_time_slope: f64,
    pub target_logits: Vec<f64>,
    pub target_marker_slopes: Vec<f64>,
    /// Minimum probability of every action.
    pub floor: f64,
    /// Withhold the biomarker from the recorded features and let the
    /// subgroup drive switching directly: confounding the state misses.
    pub hidden_confounder: bool,
    pub hidden_strength: f64,
}

impl Default for ChronicConfig {
    fn default() -> Self {
        Self {
            n_patients: 2000,
            seed: 0,
            n_actions: 4,
            horizon_min: 3,
            horizon_max: 6,
            group_probability: 0.4,
            marker_noise: 0.35,
            initial_index_mean: 28.0,
            initial_index_sd: 10.0,
            effects: [vec![-5.0, -1.0, 0.0, 1.0], vec![-2.0, 0.0, -6.0, 1.0]],
            index_noise: 4.0,
            baseline_logits: vec![1.5, 0.0, -0.5, -1.0],
            baseline_age_slopes: vec![0.0, 0.8, 0.0, 0.0],
            switch_intercept: -2.2,
            switch_index_slope: 0.8,
            switch_time_slope: -0.1,
            target_logits: vec![0.0, 0.3, 0.3, -0.5],
            target_marker_slopes: vec![0.0, -2.0, 2.0, 0.0],
            floor: 0.01,
            hidden_confounder: false,
            hidden_strength: 1.5,
        }
    }
}

impl ChronicConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.n_actions;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(2..=8).contains(&k) {
            return bad(format!("chronic simulator supports 2..=8 actions, got {k}"));
        }
        if self.horizon_min < 1 || self.horizon_min > self.horizon_max {
            return bad("horizon range must satisfy 1 <= horizon_min <= horizon_max".into());
        }
        for (name, v) in [
            ("effects[0]", &self.effects[0]),
            ("effects[1]", &self.effects[1]),
            ("baseline_logits", &self.baseline_logits),
            ("baseline_age_slopes", &self.baseline_age_slopes),
            ("target_logits", &self.target_logits),
            ("target_marker_slopes", &self.target_marker_slopes),
        ] {
            if v.len() != k {
                return bad(format!("{name} has {} entries, expected {k}", v.len()));
            }
        }
        if !(0.0..=1.0).contains(&self.group_probability) {
            return bad("group_probability must lie in [0, 1]".into());
        }
        if !(self.floor >= 0.0 && self.floor * k as f64 <= 1.0) {
            return bad(format!("floor must lie in [0, 1/{k}]"));
        }
        if self.marker_noise < 0.0 || self.index_noise < 0.0 || self.initial_index_sd < 0.0 {
            return bad("noise scales must be non-negative".into());
        }
        Ok(())
    }
}

/// Observed (and, for the hidden variant, latent) inputs of the behavior
/// policy at one decision point.
#[derive(Debug, Clone, Copy)]
pub struct ChronicState {
    pub age: f64,
    pub marker: f64,
    pub index: f64,
    pub prev_action: Option<usize>,
    pub time_on_treatment: usize,
    pub group: usize,
}

pub struct ChronicSimulator {
    cfg: ChronicConfig,
}

impl ChronicSimulator {
    pub fn new(cfg: ChronicConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ChronicConfig {
        &self.cfg
    }

    /// Probability of switching away from the current treatment.
    pub fn switch_probability(&self, s: &ChronicState) -> f64 {
        let c = &self.cfg;
        let mut z = c.switch_intercept
            + c.switch_index_slope * (s.index - 25.0) / 10.0
            + c.switch_time_slope * (s.time_on_treatment as f64 - 1.0);
        if c.hidden_confounder {
            z += c.hidden_strength * s.group as f64;
        }
        sigmoid(z)
    }

    /// Exact behavior distribution, floor included.
    pub fn behavior(&self, s: &ChronicState) -> Vec<f64> {
        let c = &self.cfg;
        let k = c.n_actions;
        let mix = match s.prev_action {
            None => {
                let logits: Vec<f64> =
                    (0..k).map(|a| c.baseline_logits[a] + c.baseline_age_slopes[a] * (s.age - 55.0) / 10.0).collect();
                softmax(&logits)
            }
            Some(prev) => {
                let ps = self.switch_probability(s);
                let logits: Vec<f64> = (0..k)
                    .map(|b| {
                        if b == prev {
                            f64::NEG_INFINITY
                        } else {
                            c.target_logits[b] + c.target_marker_slopes[b] * (s.marker - 0.5)
                        }
                    })
                    .collect();
                let mut p: Vec<f64> = softmax(&logits).iter().map(|q| ps * q).collect();
                p[prev] = 1.0 - ps;
                p
            }
        };
        let scale = 1.0 - k as f64 * c.floor;
        mix.iter().map(|&p| scale * p + c.floor).collect()
    }

    /// Action with the most negative disease-index effect for a subgroup.
    pub fn best_action(&self, group: usize) -> usize {
        let e = &self.cfg.effects[group];
        (0..e.len()).fold(0, |best, a| if e[a] < e[best] { a } else { best })
    }

    fn features(&self, age: f64, female: bool, marker: f64, index: f64) -> Features {
        let mut f = Features::new();
        f.insert("age".into(), Some(FeatureValue::Number(age)));
        f.insert("sex".into(), Some(FeatureValue::Category(if female { "F" } else { "M" }.into())));
        if !self.cfg.hidden_confounder {
            f.insert("marker".into(), Some(FeatureValue::Number(marker)));
        }
        f.insert("disease_index".into(), Some(FeatureValue::Number(index)));
        f
    }
}

impl Simulator for ChronicSimulator {
    fn n_actions(&self) -> usize {
        self.cfg.n_actions
    }

    fn schema(&self) -> FeatureSchema {
        let mut features = vec![FeatureSpec::numeric("age"), FeatureSpec::categorical("sex", ["F", "M"])];
        if !self.cfg.hidden_confounder {
            features.push(FeatureSpec::numeric("marker"));
        }
        features.push(FeatureSpec::numeric("disease_index"));
        FeatureSchema { features }
    }

    fn provenance(&self) -> String {
        format!("chronic simulator, seed {}", self.cfg.seed)
    }

    fn rollout(&self, rng: &mut ChaCha8Rng, choose: &Chooser) -> Result<Trajectory> {
        let c = &self.cfg;
        let std: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
        let group = usize::from(rng.gen_bool(c.group_probability));
        let age = (55.0 + 12.0 * std.sample(rng)).clamp(18.0, 90.0);
        let female = rng.gen_bool(0.75);
        let marker = group as f64 + c.marker_noise * std.sample(rng);
        let mut index = (c.initial_index_mean + c.initial_index_sd * std.sample(rng)).clamp(0.0, 76.0);
        let horizon = rng.gen_range(c.horizon_min..=c.horizon_max);
        let best = self.best_action(group);

        let mut history: Vec<(usize, f64)> = Vec::with_capacity(horizon);
        let mut steps = Vec::with_capacity(horizon);
        for stage in 1..=horizon {
            let features = self.features(age, female, marker, index);
            let state = ChronicState {
                age,
                marker,
                index,
                prev_action: history.last().map(|&(a, _)| a),
                time_on_treatment: time_on_treatment(&history),
                group,
            };
            let mu = self.behavior(&state);
            let ctx = RolloutContext { features: &features, history: &history, stage, behavior: &mu, best_action: best };
            let pi = choose(&ctx)?;
            let a = sample(rng, &pi, c.n_actions)?;
            let next = (index + c.effects[group][a] + c.index_noise * std.sample(rng)).clamp(0.0, 76.0);
            let reward = 10.0 - next;
            history.push((a, reward));
            steps.push(Step { features, action: a, reward });
            index = next;
        }
        Ok(Trajectory { id: String::new(), steps })
    }
}

/// The generator's behavior policy read off encoded state vectors.
pub struct ChronicTruth {
    sim: ChronicSimulator,
    age: usize,
    marker: usize,
    index: usize,
    prev_none: usize,
    time_on_treatment: usize,
}

impl ChronicTruth {
    /// Needs the biomarker and time-on-treatment slots, so it is unavailable
    /// for the hidden-confounder variant.
    pub fn new(cfg: ChronicConfig, layout: &StateLayout) -> Result<Self> {
        let find = |name: &str| {
            layout
                .index_of(name)
                .ok_or_else(|| Error::Schema(format!("state layout lacks `{name}`; the true behavior policy cannot be evaluated")))
        };
        Ok(Self {
            age: find("age")?,
            marker: find("marker")?,
            index: find("disease_index")?,
            prev_none: find("prev_action=none")?,
            time_on_treatment: find("time_on_treatment")?,
            sim: ChronicSimulator::new(cfg)?,
        })
    }

    pub fn simulator(&self) -> &ChronicSimulator {
        &self.sim
    }
}

impl Policy for ChronicTruth {
    fn n_actions(&self) -> usize {
        self.sim.cfg.n_actions
    }

    fn probabilities(&self, q: &StateQuery) -> Result<Vec<f64>> {
        let s = q.state;
        let k = self.sim.cfg.n_actions;
        if s.len() <= self.time_on_treatment.max(self.prev_none + k) {
            return Err(Error::DimensionMismatch { expected: self.time_on_treatment + 1, got: s.len() });
        }
        let state = ChronicState {
            age: s[self.age],
            marker: s[self.marker],
            index: s[self.index],
            prev_action: q.prev_action,
            time_on_treatment: s[self.time_on_treatment] as usize,
            group: 0,
        };
        Ok(self.sim.behavior(&state))
    }
}
