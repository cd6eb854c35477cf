//! Behavior-policy models built from calibrated trees.
//!
//! * DT: one K-class tree over all decision points.
//! * DT-S: a binary switch tree (did the action change?) and a K-class
//!   treatment tree fitted on switch events, composed as
//!   `p(k) = (1 - ps) 1[k = prev] + ps * pt~(k)` where `pt~` is the treatment
//!   distribution with the previous action excluded and renormalised.
//! * DT-BLS: DT-S for later stages plus a separate tree for the first stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::Calibrator;
use crate::data::StateRecord;
use crate::error::{Error, Result};
use crate::policy::{Policy, StateQuery};
use crate::tree::{DecisionTree, LeafNode, TreeHyperparams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelType {
    Dt,
    Dts,
    Dtbls,
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelType::Dt => "dt",
            ModelType::Dts => "dts",
            ModelType::Dtbls => "dtbls",
        })
    }
}

impl FromStr for ModelType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "dt" => Ok(ModelType::Dt),
            "dts" => Ok(ModelType::Dts),
            "dtbls" => Ok(ModelType::Dtbls),
            _ => Err(Error::InvalidConfig(format!("unknown model type `{s}` (expected dt, dts or dtbls)"))),
        }
    }
}

/// Which per-step quantity is averaged into leaf outcome statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// The immediate reward of the step.
    #[default]
    Reward,
    /// The sum of rewards from the step to the end of the trajectory.
    ReturnToGo,
}

impl OutcomeKind {
    pub fn of(&self, r: &StateRecord) -> f64 {
        match self {
            OutcomeKind::Reward => r.reward,
            OutcomeKind::ReturnToGo => r.return_to_go,
        }
    }
}

/// Hyperparameters for every tree a model may contain. `tree` is the DT
/// model's only tree and the DT-BLS first-stage tree; `switch` and
/// `treatment` configure the meta-estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelHyperparams {
    pub tree: TreeHyperparams,
    pub switch: TreeHyperparams,
    pub treatment: TreeHyperparams,
}

impl ModelHyperparams {
    pub fn uniform(hp: TreeHyperparams) -> Self {
        Self { tree: hp, switch: hp, treatment: hp }
    }
}

/// A tree followed by per-class calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedTree {
    pub tree: DecisionTree,
    pub calibration: Calibrator,
}

impl CalibratedTree {
    fn fit(x: &[&[f64]], y: &[usize], n_classes: usize, hp: &TreeHyperparams) -> Result<Self> {
        let tree = DecisionTree::fit(x, y, n_classes, hp)?;
        Ok(Self { tree, calibration: Calibrator::identity(n_classes) })
    }

    pub fn raw_probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.tree.predict_proba(x)
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.calibration.apply(&self.tree.predict_proba(x)?)
    }

    /// Refits the calibration on `(x, y)`; an empty set leaves the identity.
    fn calibrate(&mut self, x: &[&[f64]], y: &[usize]) -> Result<()> {
        let n = self.tree.n_classes();
        self.calibration = if x.is_empty() {
            Calibrator::identity(n)
        } else {
            let raw = x.iter().map(|s| self.tree.predict_proba(s)).collect::<Result<Vec<_>>>()?;
            Calibrator::fit(&raw, y, n)?
        };
        Ok(())
    }

    fn attach(&mut self, x: &[&[f64]], y: &[usize], outcomes: &[f64]) -> Result<()> {
        self.tree = self.tree.attach_outcomes(x, y, outcomes)?;
        Ok(())
    }

    fn leaf(&self, x: &[f64]) -> Result<&LeafNode> {
        self.tree.leaf(x)
    }
}

/// Treatment distribution with the previous action excluded and the rest
/// renormalised. When all mass sits on `prev`, falls back to uniform over
/// the other actions; the flag reports whether the fallback was used.
pub fn exclude_previous(p_treat: &[f64], prev: usize) -> (Vec<f64>, bool) {
    let k = p_treat.len();
    let rest: f64 = p_treat.iter().enumerate().filter(|&(j, _)| j != prev).map(|(_, &p)| p).sum();
    if rest > 0.0 {
        let out = p_treat.iter().enumerate().map(|(j, &p)| if j == prev { 0.0 } else { p / rest }).collect();
        (out, false)
    } else {
        let u = 1.0 / (k - 1) as f64;
        ((0..k).map(|j| if j == prev { 0.0 } else { u }).collect(), true)
    }
}

/// Stay/switch composition. The entry at `prev` is exactly `1 - p_switch`.
pub fn compose(p_switch: f64, p_treat: &[f64], prev: usize) -> Vec<f64> {
    let (tilde, fallback) = exclude_previous(p_treat, prev);
    if fallback {
        log::trace!("treatment mass entirely on previous action {prev}; using uniform switch targets");
    }
    let mut out: Vec<f64> = tilde.iter().map(|&q| p_switch * q).collect();
    out[prev] = 1.0 - p_switch;
    out
}

fn is_switch(r: &StateRecord) -> bool {
    r.prev_action.is_some_and(|p| p != r.action)
}

/// Switch tree plus treatment tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaEstimator {
    pub n_actions: usize,
    /// Binary: class 1 means the action differs from the previous one.
    pub switch: CalibratedTree,
    /// K-class tree over switch events.
    pub treatment: CalibratedTree,
    /// Whether first-stage decisions (no previous action) count as switch
    /// events. They do for DT-S, which must also answer first-stage queries;
    /// the DT-BLS inner estimator only sees later stages.
    pub initiation_events: bool,
}

impl MetaEstimator {
    fn switch_set(records: &[StateRecord]) -> (Vec<&[f64]>, Vec<usize>) {
        records
            .iter()
            .filter(|r| r.prev_action.is_some())
            .map(|r| (r.state.as_slice(), usize::from(is_switch(r))))
            .unzip()
    }

    fn treatment_set(records: &[StateRecord], initiation: bool) -> Vec<&StateRecord> {
        records.iter().filter(|r| is_switch(r) || (initiation && r.prev_action.is_none())).collect()
    }

    pub fn fit(
        records: &[StateRecord],
        n_actions: usize,
        hp_switch: &TreeHyperparams,
        hp_treat: &TreeHyperparams,
        initiation_events: bool,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("behavior training records"));
        }
        let (xs, ys) = Self::switch_set(records);
        if !ys.contains(&1) {
            return Err(Error::DegenerateSwitchData);
        }
        let switch = CalibratedTree::fit(&xs, &ys, 2, hp_switch)?;
        let events = Self::treatment_set(records, initiation_events);
        debug_assert!(events.iter().all(|r| r.prev_action != Some(r.action)));
        let xt: Vec<&[f64]> = events.iter().map(|r| r.state.as_slice()).collect();
        let yt: Vec<usize> = events.iter().map(|r| r.action).collect();
        let treatment = CalibratedTree::fit(&xt, &yt, n_actions, hp_treat)?;
        Ok(Self { n_actions, switch, treatment, initiation_events })
    }

    /// Number of samples the treatment tree was fitted on.
    pub fn treatment_training_size(&self) -> u64 {
        self.treatment.tree.leaves().map(|l| l.n()).sum()
    }

    pub fn switch_probability(&self, state: &[f64]) -> Result<f64> {
        Ok(self.switch.probabilities(state)?[1])
    }

    pub fn treatment_probabilities(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.treatment.probabilities(state)
    }

    /// Distribution over switch targets given a previous action.
    pub fn conditional_switch_distribution(&self, state: &[f64], prev: usize) -> Result<Vec<f64>> {
        check_action(prev, self.n_actions)?;
        Ok(exclude_previous(&self.treatment_probabilities(state)?, prev).0)
    }

    pub fn action_probabilities(&self, state: &[f64], prev: Option<usize>) -> Result<Vec<f64>> {
        match prev {
            None => self.treatment_probabilities(state),
            Some(p) => {
                check_action(p, self.n_actions)?;
                Ok(compose(self.switch_probability(state)?, &self.treatment_probabilities(state)?, p))
            }
        }
    }

    fn calibrate(&mut self, val: &[StateRecord]) -> Result<()> {
        let (xs, ys) = Self::switch_set(val);
        self.switch.calibrate(&xs, &ys)?;
        let events = Self::treatment_set(val, self.initiation_events);
        let xt: Vec<&[f64]> = events.iter().map(|r| r.state.as_slice()).collect();
        let yt: Vec<usize> = events.iter().map(|r| r.action).collect();
        self.treatment.calibrate(&xt, &yt)
    }

    fn attach(&mut self, train: &[StateRecord], kind: OutcomeKind) -> Result<()> {
        let with_prev: Vec<&StateRecord> = train.iter().filter(|r| r.prev_action.is_some()).collect();
        let xs: Vec<&[f64]> = with_prev.iter().map(|r| r.state.as_slice()).collect();
        let ys: Vec<usize> = with_prev.iter().map(|r| usize::from(is_switch(r))).collect();
        let os: Vec<f64> = with_prev.iter().map(|r| kind.of(r)).collect();
        self.switch.attach(&xs, &ys, &os)?;
        let events = Self::treatment_set(train, self.initiation_events);
        let xt: Vec<&[f64]> = events.iter().map(|r| r.state.as_slice()).collect();
        let yt: Vec<usize> = events.iter().map(|r| r.action).collect();
        let ot: Vec<f64> = events.iter().map(|r| kind.of(r)).collect();
        self.treatment.attach(&xt, &yt, &ot)
    }

    /// Staying on `prev` uses the stay events of the switch-tree leaf; any
    /// other action uses switch events to it in the treatment-tree leaf.
    pub fn leaf_outcome(&self, state: &[f64], action: usize, prev: Option<usize>) -> Result<Option<f64>> {
        check_action(action, self.n_actions)?;
        match prev {
            Some(p) if p == action => Ok(self.switch.leaf(state)?.outcome_avg(0)),
            _ => Ok(self.treatment.leaf(state)?.outcome_avg(action)),
        }
    }
}

/// First-stage tree plus a meta-estimator for later stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMeta {
    pub baseline: CalibratedTree,
    pub inner: MetaEstimator,
}

fn check_action(a: usize, k: usize) -> Result<()> {
    if a >= k {
        return Err(Error::Validation(format!("action {a} out of range for K = {k}")));
    }
    Ok(())
}

fn xy<'a>(records: &[&'a StateRecord]) -> (Vec<&'a [f64]>, Vec<usize>) {
    records.iter().map(|r| (r.state.as_slice(), r.action)).unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BehaviorModel {
    Dt(CalibratedTree),
    Dts(MetaEstimator),
    Dtbls(BaselineMeta),
}

impl BehaviorModel {
    /// Fits an uncalibrated model; see [`BehaviorModel::calibrate`].
    pub fn fit(model_type: ModelType, train: &[StateRecord], n_actions: usize, hp: &ModelHyperparams) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("behavior training records"));
        }
        if n_actions < 2 {
            return Err(Error::Validation("K must be at least 2".into()));
        }
        match model_type {
            ModelType::Dt => {
                let all: Vec<&StateRecord> = train.iter().collect();
                let (x, y) = xy(&all);
                Ok(BehaviorModel::Dt(CalibratedTree::fit(&x, &y, n_actions, &hp.tree)?))
            }
            ModelType::Dts => Ok(BehaviorModel::Dts(MetaEstimator::fit(train, n_actions, &hp.switch, &hp.treatment, true)?)),
            ModelType::Dtbls => {
                let first: Vec<&StateRecord> = train.iter().filter(|r| r.stage == 1).collect();
                if first.is_empty() {
                    return Err(Error::EmptyInput("first-stage records"));
                }
                let (x, y) = xy(&first);
                let baseline = CalibratedTree::fit(&x, &y, n_actions, &hp.tree)?;
                let later: Vec<StateRecord> = train.iter().filter(|r| r.stage > 1).cloned().collect();
                let inner = MetaEstimator::fit(&later, n_actions, &hp.switch, &hp.treatment, false)
                    .map_err(|e| if matches!(e, Error::EmptyInput(_)) { Error::DegenerateSwitchData } else { e })?;
                Ok(BehaviorModel::Dtbls(BaselineMeta { baseline, inner }))
            }
        }
    }

    pub fn model_type(&self) -> ModelType {
        match self {
            BehaviorModel::Dt(_) => ModelType::Dt,
            BehaviorModel::Dts(_) => ModelType::Dts,
            BehaviorModel::Dtbls(_) => ModelType::Dtbls,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            BehaviorModel::Dt(t) => t.tree.n_classes(),
            BehaviorModel::Dts(m) => m.n_actions,
            BehaviorModel::Dtbls(b) => b.inner.n_actions,
        }
    }

    /// The meta-estimator answering a query, if the model has one and the
    /// query is not routed elsewhere.
    pub fn meta_for(&self, q: &StateQuery) -> Option<&MetaEstimator> {
        match self {
            BehaviorModel::Dt(_) => None,
            BehaviorModel::Dts(m) => Some(m),
            BehaviorModel::Dtbls(b) if q.stage > 1 => Some(&b.inner),
            BehaviorModel::Dtbls(_) => None,
        }
    }

    pub fn is_meta(&self) -> bool {
        !matches!(self, BehaviorModel::Dt(_))
    }

    pub fn action_probabilities(&self, q: &StateQuery) -> Result<Vec<f64>> {
        match self {
            BehaviorModel::Dt(t) => t.probabilities(q.state),
            BehaviorModel::Dts(m) => m.action_probabilities(q.state, q.prev_action),
            BehaviorModel::Dtbls(b) if q.stage <= 1 => b.baseline.probabilities(q.state),
            BehaviorModel::Dtbls(b) => b.inner.action_probabilities(q.state, q.prev_action),
        }
    }

    /// Copy with calibration maps fitted on validation records, each tree on
    /// the same subset of records it was fitted on.
    pub fn calibrate(&self, val: &[StateRecord]) -> Result<Self> {
        let mut out = self.clone();
        match &mut out {
            BehaviorModel::Dt(t) => {
                let all: Vec<&StateRecord> = val.iter().collect();
                let (x, y) = xy(&all);
                t.calibrate(&x, &y)?;
            }
            BehaviorModel::Dts(m) => m.calibrate(val)?,
            BehaviorModel::Dtbls(b) => {
                let first: Vec<&StateRecord> = val.iter().filter(|r| r.stage == 1).collect();
                let (x, y) = xy(&first);
                b.baseline.calibrate(&x, &y)?;
                let later: Vec<StateRecord> = val.iter().filter(|r| r.stage > 1).cloned().collect();
                b.inner.calibrate(&later)?;
            }
        }
        Ok(out)
    }

    /// Copy with per-leaf outcome statistics tallied from training records.
    pub fn attach_outcomes(&self, train: &[StateRecord], kind: OutcomeKind) -> Result<Self> {
        let mut out = self.clone();
        match &mut out {
            BehaviorModel::Dt(t) => {
                let all: Vec<&StateRecord> = train.iter().collect();
                let (x, y) = xy(&all);
                let o: Vec<f64> = train.iter().map(|r| kind.of(r)).collect();
                t.attach(&x, &y, &o)?;
            }
            BehaviorModel::Dts(m) => m.attach(train, kind)?,
            BehaviorModel::Dtbls(b) => {
                let first: Vec<&StateRecord> = train.iter().filter(|r| r.stage == 1).collect();
                let (x, y) = xy(&first);
                let o: Vec<f64> = first.iter().map(|r| kind.of(r)).collect();
                b.baseline.attach(&x, &y, &o)?;
                let later: Vec<StateRecord> = train.iter().filter(|r| r.stage > 1).cloned().collect();
                b.inner.attach(&later, kind)?;
            }
        }
        Ok(out)
    }

    /// Average observed outcome of taking `action` in the query's leaf, or
    /// `None` when the relevant leaf holds no such samples.
    pub fn leaf_outcome(&self, q: &StateQuery, action: usize) -> Result<Option<f64>> {
        check_action(action, self.n_actions())?;
        match self {
            BehaviorModel::Dt(t) => Ok(t.leaf(q.state)?.outcome_avg(action)),
            BehaviorModel::Dts(m) => m.leaf_outcome(q.state, action, q.prev_action),
            BehaviorModel::Dtbls(b) if q.stage <= 1 => Ok(b.baseline.leaf(q.state)?.outcome_avg(action)),
            BehaviorModel::Dtbls(b) => b.inner.leaf_outcome(q.state, action, q.prev_action),
        }
    }

    /// Named trees for export.
    pub fn trees(&self) -> Vec<(&'static str, &DecisionTree)> {
        match self {
            BehaviorModel::Dt(t) => vec![("tree", &t.tree)],
            BehaviorModel::Dts(m) => vec![("switch", &m.switch.tree), ("treatment", &m.treatment.tree)],
            BehaviorModel::Dtbls(b) => vec![
                ("baseline", &b.baseline.tree),
                ("switch", &b.inner.switch.tree),
                ("treatment", &b.inner.treatment.tree),
            ],
        }
    }

    /// Names every tree's features.
    pub fn with_feature_names(mut self, names: &[String]) -> Result<Self> {
        let set = |t: &mut CalibratedTree| -> Result<()> {
            t.tree = t.tree.clone().with_feature_names(names.to_vec())?;
            Ok(())
        };
        match &mut self {
            BehaviorModel::Dt(t) => set(t)?,
            BehaviorModel::Dts(m) => {
                set(&mut m.switch)?;
                set(&mut m.treatment)?;
            }
            BehaviorModel::Dtbls(b) => {
                set(&mut b.baseline)?;
                set(&mut b.inner.switch)?;
                set(&mut b.inner.treatment)?;
            }
        }
        Ok(self)
    }
}

impl Policy for BehaviorModel {
    fn n_actions(&self) -> usize {
        BehaviorModel::n_actions(self)
    }

    fn probabilities(&self, q: &StateQuery) -> Result<Vec<f64>> {
        self.action_probabilities(q)
    }
}
