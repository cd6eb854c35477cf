//! Trajectory data model, ingestion, preprocessing, state construction and
//! trajectory-level splitting.

mod io;
mod preprocess;
mod split;
mod state;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, read_csv, read_jsonl, save_dataset, write_csv, write_jsonl, Format};
pub use preprocess::{impute_and_encode, ColumnRule, Preprocessor};
pub use split::{split, SplitSpec};
pub use state::{
    build_states, episodes, switch_count, AggregateConfig, StateEncoder, StateLayout,
    StateRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
            categories: None,
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories: Some(categories.into_iter().map(Into::into).collect()),
        }
    }
}

/// Ordered list of covariates shared by every step of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let schema = Self { features };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
            match (f.kind, &f.categories) {
                (FeatureKind::Categorical, Some(c)) if c.len() >= 2 => {
                    let distinct: HashSet<_> = c.iter().collect();
                    if distinct.len() != c.len() {
                        return Err(Error::Schema(format!(
                            "categorical feature `{}` lists duplicate categories",
                            f.name
                        )));
                    }
                }
                (FeatureKind::Categorical, _) => {
                    return Err(Error::Schema(format!(
                        "categorical feature `{}` must list at least 2 categories",
                        f.name
                    )))
                }
                (FeatureKind::Numeric, Some(_)) => {
                    return Err(Error::Schema(format!(
                        "numeric feature `{}` cannot list categories",
                        f.name
                    )))
                }
                (FeatureKind::Numeric, None) => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }
}

/// A covariate value: JSON numbers are numeric, JSON strings categorical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Number(f64),
    Category(String),
}

impl FeatureValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Self::Number(v) => Some(*v),
            Self::Category(_) => None,
        }
    }
}

/// Feature name to value; `None` marks a missing observation.
pub type Features = BTreeMap<String, Option<FeatureValue>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub features: Features,
    pub action: usize,
    pub reward: f64,
}

impl Step {
    pub fn feature(&self, name: &str) -> Option<&FeatureValue> {
        self.features.get(name).and_then(Option::as_ref)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: FeatureSchema,
    /// Number of actions `K`.
    pub n_actions: usize,
    pub trajectories: Vec<Trajectory>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        schema: FeatureSchema,
        n_actions: usize,
        trajectories: Vec<Trajectory>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self {
            schema,
            n_actions,
            trajectories,
            provenance: provenance.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::horizon).sum()
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.trajectories.iter().map(|t| t.id.as_str()).collect()
    }

    /// Mean undiscounted return over trajectories.
    pub fn mean_return(&self) -> f64 {
        let n = self.trajectories.len() as f64;
        self.trajectories.iter().map(Trajectory::total_return).sum::<f64>() / n
    }

    /// Same schema and action space, different trajectories.
    pub fn with_trajectories(&self, trajectories: Vec<Trajectory>) -> Self {
        Self {
            schema: self.schema.clone(),
            n_actions: self.n_actions,
            trajectories,
            provenance: self.provenance.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.n_actions < 2 {
            return Err(Error::Schema(format!(
                "K must be at least 2, got {}",
                self.n_actions
            )));
        }
        let mut ids = HashSet::new();
        for traj in &self.trajectories {
            if !ids.insert(traj.id.as_str()) {
                return Err(Error::Validation(format!("duplicate trajectory id `{}`", traj.id)));
            }
            if traj.steps.is_empty() {
                return Err(Error::Validation(format!("trajectory `{}` is empty", traj.id)));
            }
            for (t, step) in traj.steps.iter().enumerate() {
                self.validate_step(&traj.id, t + 1, step)?;
            }
        }
        Ok(())
    }

    fn validate_step(&self, id: &str, t: usize, step: &Step) -> Result<()> {
        if step.action >= self.n_actions {
            return Err(Error::Schema(format!(
                "trajectory `{id}` stage {t}: action {} out of range for K = {}",
                step.action, self.n_actions
            )));
        }
        if !step.reward.is_finite() {
            return Err(Error::Validation(format!(
                "trajectory `{id}` stage {t}: reward is not finite"
            )));
        }
        for (name, value) in &step.features {
            let spec = self.schema.get(name).ok_or_else(|| {
                Error::Schema(format!("trajectory `{id}` stage {t}: unknown feature `{name}`"))
            })?;
            match (spec.kind, value) {
                (_, None) => {}
                (FeatureKind::Numeric, Some(FeatureValue::Number(v))) if v.is_finite() => {}
                (FeatureKind::Categorical, Some(FeatureValue::Category(c)))
                    if spec.categories.as_ref().is_some_and(|cs| cs.contains(c)) => {}
                (_, Some(v)) => {
                    return Err(Error::Schema(format!(
                        "trajectory `{id}` stage {t}: value {v:?} invalid for feature `{name}`"
                    )))
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn num(v: f64) -> Option<FeatureValue> {
        Some(FeatureValue::Number(v))
    }

    pub fn cat(v: &str) -> Option<FeatureValue> {
        Some(FeatureValue::Category(v.to_string()))
    }

    pub fn step(features: &[(&str, Option<FeatureValue>)], action: usize, reward: f64) -> Step {
        Step {
            features: features.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            action,
            reward,
        }
    }

    /// Two-feature schema (`x` numeric, `c` categorical A/B) with `n` short trajectories.
    pub fn toy_dataset(n: usize, k: usize) -> Dataset {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::numeric("x"),
            FeatureSpec::categorical("c", ["A", "B"]),
        ])
        .unwrap();
        let trajectories = (0..n)
            .map(|i| Trajectory {
                id: format!("p{i}"),
                steps: (0..(1 + i % 3))
                    .map(|t| {
                        step(
                            &[("x", num((i + t) as f64)), ("c", cat(if i % 2 == 0 { "A" } else { "B" }))],
                            (i + t) % k,
                            t as f64 - 1.0,
                        )
                    })
                    .collect(),
            })
            .collect();
        Dataset::new(schema, k, trajectories, "toy").unwrap()
    }
}
