//! State vectors: current covariates, previous action (one-hot with a
//! distinguished "none" slot at the first stage), previous reward and
//! optional history aggregates.

use serde::{Deserialize, Serialize};

use super::{Dataset, Features, Preprocessor, Step};
use crate::error::{Error, Result};

/// Which history aggregates are appended to the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregateConfig {
    /// Number of treatment changes among past actions.
    pub switch_count: bool,
    /// Mean of past rewards (0 at the first stage).
    pub mean_reward: bool,
    /// Consecutive past stages on the previous action (0 at the first stage).
    pub time_on_treatment: bool,
    /// 1-based stage index.
    pub stage: bool,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        Self { switch_count: true, mean_reward: true, time_on_treatment: true, stage: true }
    }
}

impl AggregateConfig {
    pub fn none() -> Self {
        Self { switch_count: false, mean_reward: false, time_on_treatment: false, stage: false }
    }
}

/// Slot names of a state vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub names: Vec<String>,
}

impl StateLayout {
    pub fn new(covariates: impl IntoIterator<Item = String>, n_actions: usize, cfg: &AggregateConfig) -> Self {
        let mut names: Vec<String> = covariates.into_iter().collect();
        names.push("prev_action=none".into());
        names.extend((0..n_actions).map(|a| format!("prev_action={a}")));
        names.push("prev_reward".into());
        if cfg.switch_count {
            names.push("n_switches".into());
        }
        if cfg.mean_reward {
            names.push("mean_reward".into());
        }
        if cfg.time_on_treatment {
            names.push("time_on_treatment".into());
        }
        if cfg.stage {
            names.push("stage".into());
        }
        Self { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// One decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRecord {
    pub trajectory_id: String,
    /// 1-based stage index.
    pub stage: usize,
    pub state: Vec<f64>,
    pub prev_action: Option<usize>,
    pub action: usize,
    pub reward: f64,
    /// Sum of rewards from this stage to the end of the trajectory.
    pub return_to_go: f64,
    /// Length of the trajectory this record belongs to.
    pub horizon: usize,
}

/// Number of treatment changes in an action sequence.
pub fn switch_count(actions: &[usize]) -> usize {
    actions.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Appends previous-action, previous-reward and aggregate slots to the
/// encoded covariates. `history` holds the `(action, reward)` pairs of all
/// earlier stages.
pub(crate) fn assemble_state(
    mut covariates: Vec<f64>,
    history: &[(usize, f64)],
    n_actions: usize,
    cfg: &AggregateConfig,
) -> Vec<f64> {
    let base = covariates.len();
    covariates.resize(base + n_actions + 1, 0.0);
    match history.last() {
        None => covariates[base] = 1.0,
        Some(&(a, _)) => covariates[base + 1 + a] = 1.0,
    }
    covariates.push(history.last().map_or(0.0, |&(_, r)| r));
    if cfg.switch_count {
        let n = history.windows(2).filter(|w| w[0].0 != w[1].0).count();
        covariates.push(n as f64);
    }
    if cfg.mean_reward {
        let mean = if history.is_empty() {
            0.0
        } else {
            history.iter().map(|&(_, r)| r).sum::<f64>() / history.len() as f64
        };
        covariates.push(mean);
    }
    if cfg.time_on_treatment {
        let run = match history.last() {
            None => 0,
            Some(&(last, _)) => history.iter().rev().take_while(|&&(a, _)| a == last).count(),
        };
        covariates.push(run as f64);
    }
    if cfg.stage {
        covariates.push((history.len() + 1) as f64);
    }
    covariates
}

fn records_for(
    id: &str,
    covariates: Vec<Vec<f64>>,
    steps: &[Step],
    n_actions: usize,
    cfg: &AggregateConfig,
) -> Vec<StateRecord> {
    let horizon = steps.len();
    let mut history: Vec<(usize, f64)> = Vec::with_capacity(horizon);
    let mut to_go: Vec<f64> = steps.iter().rev().scan(0.0, |acc, s| {
        *acc += s.reward;
        Some(*acc)
    }).collect();
    to_go.reverse();
    let mut out = Vec::with_capacity(horizon);
    for ((step, cov), rtg) in steps.iter().zip(covariates).zip(to_go) {
        out.push(StateRecord {
            trajectory_id: id.to_string(),
            stage: history.len() + 1,
            state: assemble_state(cov, &history, n_actions, cfg),
            prev_action: history.last().map(|&(a, _)| a),
            action: step.action,
            reward: step.reward,
            return_to_go: rtg,
            horizon,
        });
        history.push((step.action, step.reward));
    }
    out
}

/// Builds one record per step of an imputed/encoded dataset (all features
/// numeric and present).
pub fn build_states(ds: &Dataset, cfg: &AggregateConfig) -> Result<Vec<StateRecord>> {
    let names: Vec<&str> = ds.schema.names().collect();
    let mut out = Vec::with_capacity(ds.n_steps());
    for traj in &ds.trajectories {
        let covariates = traj
            .steps
            .iter()
            .map(|s| {
                names
                    .iter()
                    .map(|n| {
                        s.feature(n).and_then(|v| v.as_number()).ok_or_else(|| {
                            Error::Validation(format!(
                                "trajectory `{}`: feature `{n}` is missing or not numeric; impute and encode first",
                                traj.id
                            ))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(records_for(&traj.id, covariates, &traj.steps, ds.n_actions, cfg));
    }
    Ok(out)
}

/// Splits records into per-trajectory runs (records of one trajectory are
/// contiguous and stage-ordered).
pub fn episodes(records: &[StateRecord]) -> Vec<&[StateRecord]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || records[i].stage == 1 || records[i].trajectory_id != records[start].trajectory_id {
            if i > start {
                out.push(&records[start..i]);
            }
            start = i;
        }
    }
    out
}

/// Raw features to state vectors: imputation/encoding statistics plus the
/// aggregate configuration. Serialized inside model bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEncoder {
    pub preprocessor: Preprocessor,
    pub aggregates: AggregateConfig,
    pub n_actions: usize,
}

impl StateEncoder {
    pub fn fit(train: &Dataset, aggregates: AggregateConfig) -> Result<Self> {
        Ok(Self { preprocessor: Preprocessor::fit(train)?, aggregates, n_actions: train.n_actions })
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout::new(
            self.preprocessor.output_schema().features.into_iter().map(|f| f.name),
            self.n_actions,
            &self.aggregates,
        )
    }

    pub fn dim(&self) -> usize {
        self.layout().len()
    }

    /// State at the stage following `history` with current raw covariates.
    pub fn encode(&self, features: &Features, history: &[(usize, f64)]) -> Result<Vec<f64>> {
        let cov = self.preprocessor.encode_features(features)?;
        Ok(assemble_state(cov, history, self.n_actions, &self.aggregates))
    }

    /// Records for every step of a raw (or already encoded) dataset.
    pub fn records(&self, ds: &Dataset) -> Result<Vec<StateRecord>> {
        if ds.n_actions != self.n_actions {
            return Err(Error::Schema(format!(
                "dataset has K = {}, encoder expects {}",
                ds.n_actions, self.n_actions
            )));
        }
        build_states(&self.preprocessor.transform(ds)?, &self.aggregates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::{num, step};
    use crate::data::{FeatureSchema, FeatureSpec, Trajectory};

    fn traj(actions: &[usize]) -> Dataset {
        let schema = FeatureSchema::new(vec![FeatureSpec::numeric("x")]).unwrap();
        let steps = actions
            .iter()
            .enumerate()
            .map(|(t, &a)| step(&[("x", num(t as f64))], a, (t + 1) as f64))
            .collect();
        Dataset::new(schema, 4, vec![Trajectory { id: "a".into(), steps }], "").unwrap()
    }

    fn slot(ds: &Dataset, recs: &[StateRecord], name: &str) -> Vec<f64> {
        let layout = StateLayout::new(ds.schema.names().map(String::from), ds.n_actions, &AggregateConfig::default());
        let j = layout.index_of(name).unwrap();
        recs.iter().map(|r| r.state[j]).collect()
    }

    #[test]
    fn single_step_has_none_prev_action_and_zero_reward() {
        let ds = traj(&[2]);
        let recs = build_states(&ds, &AggregateConfig::default()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].prev_action, None);
        assert_eq!(slot(&ds, &recs, "prev_action=none"), vec![1.0]);
        assert_eq!(slot(&ds, &recs, "prev_reward"), vec![0.0]);
    }

    #[test]
    fn prev_action_one_hot_marks_previous() {
        let ds = traj(&[2, 0]);
        let recs = build_states(&ds, &AggregateConfig::default()).unwrap();
        assert_eq!(recs[1].prev_action, Some(2));
        assert_eq!(slot(&ds, &recs, "prev_action=2"), vec![0.0, 1.0]);
        assert_eq!(slot(&ds, &recs, "prev_action=none"), vec![1.0, 0.0]);
        assert_eq!(slot(&ds, &recs, "prev_reward"), vec![0.0, 1.0]);
    }

    #[test]
    fn switch_count_aggregate_matches_recount() {
        let actions = [1, 1, 2, 2, 3];
        let ds = traj(&actions);
        let recs = build_states(&ds, &AggregateConfig::default()).unwrap();
        assert_eq!(slot(&ds, &recs, "n_switches"), vec![0.0, 0.0, 0.0, 1.0, 1.0]);
        // brute-force recount over each visible prefix
        for (t, r) in recs.iter().enumerate() {
            let mut n = 0;
            for i in 1..t {
                if actions[i] != actions[i - 1] {
                    n += 1;
                }
            }
            assert_eq!(slot(&ds, std::slice::from_ref(r), "n_switches")[0], n as f64);
        }
        assert_eq!(switch_count(&actions), 2);
        assert_eq!(slot(&ds, &recs, "time_on_treatment"), vec![0.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(slot(&ds, &recs, "mean_reward"), vec![0.0, 1.0, 1.5, 2.0, 2.5]);
        assert_eq!(slot(&ds, &recs, "stage"), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(recs[0].return_to_go, 15.0);
        assert_eq!(recs[4].return_to_go, 5.0);
    }

    #[test]
    fn identical_prefixes_give_identical_states() {
        let a = traj(&[1, 2, 3]);
        let b = traj(&[1, 2, 0]);
        let ra = build_states(&a, &AggregateConfig::default()).unwrap();
        let rb = build_states(&b, &AggregateConfig::default()).unwrap();
        assert_eq!(ra[0].state, rb[0].state);
        assert_eq!(ra[1].state, rb[1].state);
        assert_eq!(ra[2].state, rb[2].state);
        assert_eq!(ra[0].state.len(), 1 + 5 + 1 + 4);
    }

    #[test]
    fn episodes_group_by_trajectory() {
        let ds = crate::data::testutil::toy_dataset(5, 3);
        let enc = StateEncoder::fit(&ds, AggregateConfig::none()).unwrap();
        let recs = enc.records(&ds).unwrap();
        let eps = episodes(&recs);
        assert_eq!(eps.len(), 5);
        assert!(eps.iter().zip(&ds.trajectories).all(|(e, t)| e.len() == t.horizon()));
        assert_eq!(recs[0].state.len(), enc.dim());
    }
}
