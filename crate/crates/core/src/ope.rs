//! Off-policy evaluation with trajectory-level importance sampling.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::StateRecord;
use crate::error::{Error, Result};
use crate::policy::{Policy, StateQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Is,
    #[default]
    Wis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Returns as observed.
    #[default]
    Absolute,
    /// Each return divided by its number of stages before estimation.
    PerStage,
    /// Per-stage estimate minus the behavior policy's per-stage value.
    BehaviorRelative,
}

macro_rules! string_enum {
    ($t:ty, $($v:path => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::InvalidConfig(format!("unknown {} `{s}`", stringify!($t).to_lowercase()))),
                }
            }
        }
    };
}

string_enum!(Estimator, Estimator::Is => "is", Estimator::Wis => "wis");
string_enum!(
    Normalization,
    Normalization::Absolute => "absolute",
    Normalization::PerStage => "per_stage",
    Normalization::BehaviorRelative => "behavior_relative"
);

/// Importance weight and return of one evaluation trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryWeight {
    pub trajectory_id: String,
    pub weight: f64,
    /// Natural log of the weight; `-inf` for an exact zero.
    pub log_weight: f64,
    /// Sum of rewards.
    #[serde(rename = "return")]
    pub ret: f64,
    pub stages: usize,
}

/// Product over stages of target over behavior probability of the observed
/// action, accumulated in log space.
pub fn trajectory_weight(target: &dyn Policy, behavior: &dyn Policy, episode: &[StateRecord]) -> Result<TrajectoryWeight> {
    let first = episode.first().ok_or(Error::EmptyInput("evaluation trajectory"))?;
    let mut log_w = 0.0;
    let mut zero = false;
    for r in episode {
        let q = StateQuery::from(r);
        let pb = behavior.probabilities(&q)?[r.action];
        if pb <= 0.0 {
            return Err(Error::SupportViolation { trajectory: r.trajectory_id.clone(), stage: r.stage, action: r.action });
        }
        if zero {
            continue;
        }
        let pt = target.probabilities(&q)?[r.action];
        if pt <= 0.0 {
            zero = true;
        } else {
            log_w += pt.ln() - pb.ln();
        }
    }
    let (weight, log_weight) = if zero { (0.0, f64::NEG_INFINITY) } else { (log_w.exp(), log_w) };
    Ok(TrajectoryWeight {
        trajectory_id: first.trajectory_id.clone(),
        weight,
        log_weight,
        ret: episode.iter().map(|r| r.reward).sum(),
        stages: episode.len(),
    })
}

/// Weights for every episode, in input order.
pub fn importance_weights(target: &dyn Policy, behavior: &dyn Policy, episodes: &[&[StateRecord]]) -> Result<Vec<TrajectoryWeight>> {
    episodes.par_iter().map(|e| trajectory_weight(target, behavior, e)).collect()
}

/// `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    let s: f64 = weights.iter().sum();
    if s <= 0.0 {
        return Err(Error::NoOverlapMass);
    }
    Ok(s * s / weights.iter().map(|w| w * w).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpeResult {
    pub value: f64,
    pub ess: f64,
    pub n: usize,
    pub estimator: Estimator,
    pub normalization: Normalization,
    pub per_trajectory: Vec<TrajectoryWeight>,
}

/// Weights usable for arithmetic: the raw weights when they and their
/// squares are finite, otherwise weights divided by the largest one (with
/// the log of the divisor returned).
fn usable_weights(weights: &[TrajectoryWeight]) -> (Vec<f64>, f64) {
    let raw: Vec<f64> = weights.iter().map(|w| w.weight).collect();
    let sq: f64 = raw.iter().map(|w| w * w).sum();
    if sq.is_finite() && sq > 0.0 {
        return (raw, 0.0);
    }
    let m = weights.iter().map(|w| w.log_weight).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return (raw, 0.0);
    }
    (weights.iter().map(|w| (w.log_weight - m).exp()).collect(), m)
}

/// IS or WIS value estimate. `PerStage` and `BehaviorRelative` divide each
/// return by its length first; the behavior offset is applied separately by
/// [`normalize_value`].
pub fn estimate(weights: &[TrajectoryWeight], estimator: Estimator, normalization: Normalization) -> Result<OpeResult> {
    if weights.is_empty() {
        return Err(Error::EmptyInput("evaluation trajectories"));
    }
    let returns: Vec<f64> = weights
        .iter()
        .map(|w| match normalization {
            Normalization::Absolute => w.ret,
            Normalization::PerStage | Normalization::BehaviorRelative => w.ret / w.stages as f64,
        })
        .collect();
    let (w, log_scale) = usable_weights(weights);
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoOverlapMass);
    }
    let weighted: f64 = w.iter().zip(&returns).map(|(w, g)| w * g).sum();
    let n = weights.len();
    let value = match estimator {
        Estimator::Wis => weighted / total,
        Estimator::Is => log_scale.exp() * weighted / n as f64,
    };
    Ok(OpeResult {
        value,
        ess: effective_sample_size(&w)?,
        n,
        estimator,
        normalization,
        per_trajectory: weights.to_vec(),
    })
}

pub fn wis_estimate(weights: &[TrajectoryWeight]) -> Result<OpeResult> {
    estimate(weights, Estimator::Wis, Normalization::Absolute)
}

pub fn is_estimate(weights: &[TrajectoryWeight]) -> Result<OpeResult> {
    estimate(weights, Estimator::Is, Normalization::Absolute)
}

/// Applies the behavior offset for `BehaviorRelative`; other modes pass
/// the value through (their scaling happens before estimation).
pub fn normalize_value(value: f64, behavior_value: f64, mode: Normalization) -> f64 {
    match mode {
        Normalization::BehaviorRelative => value - behavior_value,
        Normalization::Absolute | Normalization::PerStage => value,
    }
}

/// On-policy value of the logged data under a normalization: the mean
/// return, or mean per-stage return.
pub fn behavior_value(episodes: &[&[StateRecord]], normalization: Normalization) -> f64 {
    let per: Vec<f64> = episodes
        .iter()
        .map(|e| {
            let g: f64 = e.iter().map(|r| r.reward).sum();
            match normalization {
                Normalization::Absolute => g,
                _ => g / e.len() as f64,
            }
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

/// Median and interquartile range of a set of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Summary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Quantile of sorted data by linear interpolation between order
/// statistics at position `p (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn aggregate_splits(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::EmptyInput("values to aggregate"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Summary {
        n: sorted.len(),
        median: quantile_sorted(&sorted, 0.5),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
    })
}
