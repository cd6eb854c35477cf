//! Target policies derived from a behavior model.
//!
//! * `mc`: top-k, the behavior distribution restricted to the k most
//!   probable actions and renormalised.
//! * `mc_o`: outcome-guided, the top-k action with the best leaf-average
//!   observed outcome.
//! * `mc_switch_adj`: top-k with the switch probability of a meta-estimator
//!   shifted by a constant `p1`.
//! * `random` and `behavior`, plus epsilon softening of any of them.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::behavior::{compose, BehaviorModel};
use crate::data::StateRecord;
use crate::error::{Error, Result};
use crate::rng::mix64;

/// What a policy conditions on at one decision point.
#[derive(Debug, Clone, Copy)]
pub struct StateQuery<'a> {
    pub state: &'a [f64],
    pub prev_action: Option<usize>,
    /// 1-based stage index.
    pub stage: usize,
}

impl<'a> From<&'a StateRecord> for StateQuery<'a> {
    fn from(r: &'a StateRecord) -> Self {
        Self { state: &r.state, prev_action: r.prev_action, stage: r.stage }
    }
}

pub trait Policy: Send + Sync {
    fn n_actions(&self) -> usize;

    /// Action distribution at a decision point.
    fn probabilities(&self, q: &StateQuery) -> Result<Vec<f64>>;

    /// `(clamped, total)` switch-probability adjustments made so far, for
    /// policies that adjust switching.
    fn clamp_stats(&self) -> Option<(usize, usize)> {
        None
    }
}

/// The `k` most probable actions with positive mass, ordered by
/// probability (descending) and then id (ascending).
pub fn top_k_set(p: &[f64], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..p.len()).filter(|&a| p[a] > 0.0).collect();
    ids.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}

/// `p` restricted to its top-k set and renormalised. When the set covers
/// every action with positive mass `p` is returned unchanged.
pub fn top_k_probabilities(p: &[f64], k: usize) -> Vec<f64> {
    let positive = p.iter().filter(|&&v| v > 0.0).count();
    if k >= positive {
        return p.to_vec();
    }
    restrict(p, &top_k_set(p, k)).unwrap_or_else(|| p.to_vec())
}

fn restrict(p: &[f64], set: &[usize]) -> Option<Vec<f64>> {
    let z: f64 = set.iter().map(|&a| p[a]).sum();
    if z <= 0.0 {
        return None;
    }
    let mut out = vec![0.0; p.len()];
    for &a in set {
        out[a] = p[a] / z;
    }
    Some(out)
}

fn one_hot(k: usize, a: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[a] = 1.0;
    v
}

fn check_k(k: usize, n_actions: usize) -> Result<()> {
    if k == 0 || k > n_actions {
        return Err(Error::InvalidPolicy(format!("k = {k} is out of range; k must lie in [1, {n_actions}]")));
    }
    Ok(())
}

pub struct TopK<'m> {
    model: &'m BehaviorModel,
    k: usize,
}

impl<'m> TopK<'m> {
    pub fn new(model: &'m BehaviorModel, k: usize) -> Result<Self> {
        check_k(k, model.n_actions())?;
        Ok(Self { model, k })
    }
}

impl Policy for TopK<'_> {
    fn n_actions(&self) -> usize {
        self.model.n_actions()
    }

    fn probabilities(&self, q: &StateQuery) -> Result<Vec<f64>> {
        Ok(top_k_probabilities(&self.model.action_probabilities(q)?, self.k))
    }
}

pub struct OutcomeGuided<'m> {
    model: &'m BehaviorModel,
    k: usize,
}

impl<'m> OutcomeGuided<'m> {
    pub fn new(model: &'m BehaviorModel, k: usize) -> Result<Self> {
        check_k(k, model.n_actions())?;
        Ok(Self { model, k })
    }

    /// Best-outcome action among the top-k; ties go to the lowest id and a
    /// set without any outcome data falls back to the most probable action.
    pub fn action(&self, q: &StateQuery) -> Result<usize> {
        let set = top_k_set(&self.model.action_probabilities(q)?, self.k);
        let Some(&top) = set.first() else {
            return Err(Error::Validation("behavior distribution has no positive mass".into()));
        };
        let mut ids = set.clone();
        ids.sort_unstable();
        let mut best: Option<(usize, f64)> = None;
        for a in ids {
            if let Some(o) = self.model.leaf_outcome(q, a)? {
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((a, o));
                }
            }
        }
        Ok(best.map_or(top, |(a, _)| a))
    }
}

impl Policy for OutcomeGuided<'_> {
    fn n_actions(&self) -> usize {
        self.model.n_actions()
    }

    fn probabilities(&self, q: &StateQuery) -> Result<Vec<f64>> {
        Ok(one_hot(self.model.n_actions(), self.action(q)?))
    }
}

/// Top-k policy whose switch probability is shifted by `p1`.
///
/// The top-k set is taken from the unadjusted behavior distribution. The
/// stay/switch composition is then rebuilt with `clamp(ps + p1, 0, 1)` and
/// restricted to that set. If the restriction leaves no mass (for example
/// a set holding only the previous action while the adjusted switch
/// probability is 1), the top-k set of the adjusted composition is used.
/// First-stage queries have no previous action and get the plain top-k
/// distribution.
pub struct SwitchAdjusted<'m> {
    model: &'m BehaviorModel,
    k: usize,
    p1: f64,
    queries: AtomicUsize,
    clamps: AtomicUsize,
}

impl<'m> SwitchAdjusted<'m> {
    pub fn new(model: &'m BehaviorModel, k: usize, p1: f64) -> Result<Self> {
        if !model.is_meta() {
            return Err(Error::InvalidPolicy("switch adjustment needs a DT-S or DT-BLS model".into()));
        }
        check_k(k, model.n_actions())?;
        if !p1.is_finite() || p1.abs() > 1.0 {
            return Err(Error::InvalidPolicy(format!("p1 = {p1} must lie in [-1, 1]")));
        }
        Ok(Self { model, k, p1, queries: AtomicUsize::new(0), clamps: AtomicUsize::new(0) })
    }

}

impl Policy for SwitchAdjusted<'_> {
    fn n_actions(&self) -> usize {
        self.model.n_actions()
    }

    fn clamp_stats(&self) -> Option<(usize, usize)> {
        Some((self.clamps.load(Ordering::Relaxed), self.queries.load(Ordering::Relaxed)))
    }

    fn probabilities(&self, q: &StateQuery) -> Result<Vec<f64>> {
        let p = self.model.action_probabilities(q)?;
        let (Some(meta), Some(prev)) = (self.model.meta_for(q), q.prev_action) else {
            return Ok(top_k_probabilities(&p, self.k));
        };
        if self.p1 == 0.0 {
            return Ok(top_k_probabilities(&p, self.k));
        }
        self.queries.fetch_add(1, Ordering::Relaxed);
        let shifted = meta.switch_probability(q.state)? + self.p1;
        if !(0.0..=1.0).contains(&shifted) {
            self.clamps.fetch_add(1, Ordering::Relaxed);
        }
        let adjusted = compose(shifted.clamp(0.0, 1.0), &meta.treatment_probabilities(q.state)?, prev);
        let set = top_k_set(&p, self.k);
        Ok(restrict(&adjusted, &set).unwrap_or_else(|| top_k_probabilities(&adjusted, self.k)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomMode {
    /// Uniform over all actions.
    Stochastic,
    /// One uniformly drawn action per distinct decision point, fixed by the
    /// seed.
    Deterministic { seed: u64 },
}

pub struct RandomPolicy {
    n_actions: usize,
    mode: RandomMode,
}

impl RandomPolicy {
    pub fn new(n_actions: usize, mode: RandomMode) -> Self {
        Self { n_actions, mode }
    }

    fn hash(seed: u64, q: &StateQuery) -> u64 {
        let mut h = mix64(seed);
        for v in q.state {
            h = mix64(h ^ v.to_bits());
        }
        h = mix64(h ^ q.prev_action.map_or(u64::MAX, |a| a as u64));
        mix64(h ^ q.stage as u64)
    }
}

impl Policy for RandomPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn probabilities(&self, q: &StateQuery) -> Result<Vec<f64>> {
        Ok(match self.mode {
            RandomMode::Stochastic => vec![1.0 / self.n_actions as f64; self.n_actions],
            RandomMode::Deterministic { seed } => {
                // multiply-shift maps the hash uniformly onto 0..K
                let a = ((Self::hash(seed, q) as u128 * self.n_actions as u128) >> 64) as usize;
                one_hot(self.n_actions, a)
            }
        })
    }
}

/// `(1 - K eps) p + eps` for every action.
pub struct Softened<'a> {
    inner: Box<dyn Policy + 'a>,
    epsilon: f64,
}

impl<'a> Softened<'a> {
    pub fn new(inner: Box<dyn Policy + 'a>, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon, inner.n_actions())?;
        Ok(Self { inner, epsilon })
    }
}

fn check_epsilon(epsilon: f64, k: usize) -> Result<()> {
    if !(0.0..=1.0 / k as f64).contains(&epsilon) {
        return Err(Error::InvalidPolicy(format!("epsilon = {epsilon} must lie in [0, 1/{k}]")));
    }
    Ok(())
}

impl Policy for Softened<'_> {
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    fn clamp_stats(&self) -> Option<(usize, usize)> {
        self.inner.clamp_stats()
    }

    fn probabilities(&self, q: &StateQuery) -> Result<Vec<f64>> {
        let p = self.inner.probabilities(q)?;
        if self.epsilon == 0.0 {
            return Ok(p);
        }
        let scale = 1.0 - p.len() as f64 * self.epsilon;
        Ok(p.iter().map(|&v| scale * v + self.epsilon).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Mc,
    McO,
    McSwitchAdj,
    Random,
    Behavior,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Mc => "mc",
            PolicyKind::McO => "mc_o",
            PolicyKind::McSwitchAdj => "mc_switch_adj",
            PolicyKind::Random => "random",
            PolicyKind::Behavior => "behavior",
        }
    }
}

/// Configuration-level description of a target policy, written as a table
/// (`{ type = "mc", k = 2 }`) or a compact string (`mc:k=2,epsilon=0.01`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "DescriptorRepr")]
pub struct PolicyDescriptor {
    #[serde(rename = "type")]
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub epsilon: f64,
    /// Random policy only: one fixed action per decision point instead of
    /// the uniform distribution.
    #[serde(default)]
    pub deterministic: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptorTable {
    #[serde(rename = "type")]
    kind: PolicyKind,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    p1: f64,
    #[serde(default)]
    epsilon: f64,
    #[serde(default)]
    deterministic: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DescriptorRepr {
    Compact(String),
    Table(DescriptorTable),
}

impl TryFrom<DescriptorRepr> for PolicyDescriptor {
    type Error = Error;

    fn try_from(r: DescriptorRepr) -> Result<Self> {
        match r {
            DescriptorRepr::Compact(s) => s.parse(),
            DescriptorRepr::Table(t) => {
                Ok(Self { kind: t.kind, k: t.k, p1: t.p1, epsilon: t.epsilon, deterministic: t.deterministic })
            }
        }
    }
}

impl PolicyDescriptor {
    pub fn new(kind: PolicyKind) -> Self {
        Self { kind, k: None, p1: 0.0, epsilon: 0.0, deterministic: false }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }

    pub fn with_p1(mut self, p1: f64) -> Self {
        self.p1 = p1;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// `k` for top-k style policies (1 when omitted).
    pub fn k_value(&self) -> usize {
        self.k.unwrap_or(1)
    }

    fn uses_k(&self) -> bool {
        matches!(self.kind, PolicyKind::Mc | PolicyKind::McO | PolicyKind::McSwitchAdj)
    }

    /// Checks ranges that depend on the number of actions.
    pub fn validate(&self, n_actions: usize) -> Result<()> {
        if self.uses_k() {
            check_k(self.k_value(), n_actions)?;
        } else if self.k.is_some() {
            return Err(Error::InvalidPolicy(format!("policy `{}` takes no k", self.kind.as_str())));
        }
        if self.p1 != 0.0 && self.kind != PolicyKind::McSwitchAdj {
            return Err(Error::InvalidPolicy("p1 applies only to mc_switch_adj".into()));
        }
        if !self.p1.is_finite() || self.p1.abs() > 1.0 {
            return Err(Error::InvalidPolicy(format!("p1 = {} must lie in [-1, 1]", self.p1)));
        }
        if self.deterministic && self.kind != PolicyKind::Random {
            return Err(Error::InvalidPolicy("deterministic applies only to random".into()));
        }
        check_epsilon(self.epsilon, n_actions)
    }

    /// Instantiates the policy over `model`. `seed` fixes the deterministic
    /// random policy.
    pub fn build<'m>(&self, model: &'m BehaviorModel, seed: u64) -> Result<Box<dyn Policy + 'm>> {
        let n = model.n_actions();
        self.validate(n)?;
        let base: Box<dyn Policy + 'm> = match self.kind {
            PolicyKind::Mc => Box::new(TopK::new(model, self.k_value())?),
            PolicyKind::McO => Box::new(OutcomeGuided::new(model, self.k_value())?),
            PolicyKind::McSwitchAdj => Box::new(SwitchAdjusted::new(model, self.k_value(), self.p1)?),
            PolicyKind::Random => {
                let mode = if self.deterministic { RandomMode::Deterministic { seed } } else { RandomMode::Stochastic };
                Box::new(RandomPolicy::new(n, mode))
            }
            PolicyKind::Behavior => Box::new(model.clone()),
        };
        if self.epsilon > 0.0 {
            Ok(Box::new(Softened::new(base, self.epsilon)?))
        } else {
            Ok(base)
        }
    }
}

impl fmt::Display for PolicyDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.as_str())?;
        let mut parts = vec![];
        if self.uses_k() {
            parts.push(format!("k={}", self.k_value()));
        }
        if self.kind == PolicyKind::McSwitchAdj {
            parts.push(format!("p1={}", self.p1));
        }
        if self.epsilon != 0.0 {
            parts.push(format!("epsilon={}", self.epsilon));
        }
        if self.deterministic {
            parts.push("deterministic=true".into());
        }
        if !parts.is_empty() {
            write!(f, ":{}", parts.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for PolicyDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let kind = match name {
            "mc" => PolicyKind::Mc,
            "mc_o" => PolicyKind::McO,
            "mc_switch_adj" => PolicyKind::McSwitchAdj,
            "random" => PolicyKind::Random,
            "behavior" => PolicyKind::Behavior,
            _ => return Err(Error::InvalidPolicy(format!("unknown policy type `{name}`"))),
        };
        let mut d = PolicyDescriptor::new(kind);
        for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidPolicy(format!("expected key=value, got `{part}`")))?;
            let bad = |_| Error::InvalidPolicy(format!("cannot parse `{value}` for `{key}`"));
            match key.trim() {
                "k" => d.k = Some(value.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?),
                "p1" => d.p1 = value.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "epsilon" => d.epsilon = value.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "deterministic" => {
                    d.deterministic = value.trim().parse().map_err(|e: std::str::ParseBoolError| bad(e.to_string()))?
                }
                other => return Err(Error::InvalidPolicy(format!("unknown policy parameter `{other}`"))),
            }
        }
        Ok(d)
    }
}

/// The six policies evaluated by default.
pub fn default_policies() -> Vec<PolicyDescriptor> {
    vec![
        PolicyDescriptor::new(PolicyKind::Behavior),
        PolicyDescriptor::new(PolicyKind::Mc).with_k(1),
        PolicyDescriptor::new(PolicyKind::Mc).with_k(2),
        PolicyDescriptor::new(PolicyKind::Mc).with_k(3),
        PolicyDescriptor::new(PolicyKind::McO).with_k(2),
        PolicyDescriptor::new(PolicyKind::Random),
    ]
}
