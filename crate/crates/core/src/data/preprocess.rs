//! Mean/mode imputation and one-hot encoding.

use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureKind, FeatureSchema, FeatureSpec, FeatureValue, Features, Step, Trajectory};
use crate::error::{Error, Result};

/// Imputation statistic and encoding for one source feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnRule {
    Numeric { name: String, mean: f64 },
    Categorical { name: String, categories: Vec<String>, mode: String },
}

impl ColumnRule {
    fn width(&self) -> usize {
        match self {
            Self::Numeric { .. } => 1,
            Self::Categorical { categories, .. } => categories.len(),
        }
    }
}

/// Imputation statistics learned from a training set, reusable on any
/// dataset sharing its schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub input_schema: FeatureSchema,
    pub rules: Vec<ColumnRule>,
}

impl Preprocessor {
    pub fn fit(stats_source: &Dataset) -> Result<Self> {
        let steps: Vec<&Step> = stats_source.trajectories.iter().flat_map(|t| &t.steps).collect();
        let mut rules = Vec::with_capacity(stats_source.schema.len());
        for spec in &stats_source.schema.features {
            let values = steps.iter().filter_map(|s| s.feature(&spec.name));
            let rule = match spec.kind {
                FeatureKind::Numeric => {
                    let (sum, n) = values
                        .filter_map(FeatureValue::as_number)
                        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                    if n == 0 {
                        return Err(Error::FeatureAllMissing(spec.name.clone()));
                    }
                    ColumnRule::Numeric { name: spec.name.clone(), mean: sum / n as f64 }
                }
                FeatureKind::Categorical => {
                    let categories = spec.categories.clone().unwrap_or_default();
                    let mut counts = vec![0usize; categories.len()];
                    for v in values {
                        if let FeatureValue::Category(c) = v {
                            if let Some(j) = categories.iter().position(|x| x == c) {
                                counts[j] += 1;
                            }
                        }
                    }
                    let best = counts.iter().copied().max().unwrap_or(0);
                    if best == 0 {
                        return Err(Error::FeatureAllMissing(spec.name.clone()));
                    }
                    // ties resolve to the first listed category
                    let mode = categories[counts.iter().position(|&c| c == best).unwrap()].clone();
                    ColumnRule::Categorical { name: spec.name.clone(), categories, mode }
                }
            };
            rules.push(rule);
        }
        Ok(Self { input_schema: stats_source.schema.clone(), rules })
    }

    /// Fully numeric schema: numeric features keep their name, categorical
    /// features expand to `name=category` indicator columns.
    pub fn output_schema(&self) -> FeatureSchema {
        let features = self
            .rules
            .iter()
            .flat_map(|rule| match rule {
                ColumnRule::Numeric { name, .. } => vec![FeatureSpec::numeric(name.clone())],
                ColumnRule::Categorical { name, categories, .. } => categories
                    .iter()
                    .map(|c| FeatureSpec::numeric(format!("{name}={c}")))
                    .collect(),
            })
            .collect();
        FeatureSchema { features }
    }

    pub fn output_width(&self) -> usize {
        self.rules.iter().map(ColumnRule::width).sum()
    }

    /// Imputes and encodes a single raw feature map into a dense vector.
    pub fn encode_features(&self, features: &Features) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.output_width());
        for rule in &self.rules {
            match rule {
                ColumnRule::Numeric { name, mean } => match features.get(name).and_then(Option::as_ref) {
                    None => out.push(*mean),
                    Some(FeatureValue::Number(v)) => out.push(*v),
                    Some(other) => {
                        return Err(Error::Schema(format!("expected a number for `{name}`, got {other:?}")))
                    }
                },
                ColumnRule::Categorical { name, categories, mode } => {
                    let token = match features.get(name).and_then(Option::as_ref) {
                        None => mode,
                        Some(FeatureValue::Category(c)) => c,
                        Some(other) => {
                            return Err(Error::Schema(format!("expected a category for `{name}`, got {other:?}")))
                        }
                    };
                    let j = categories
                        .iter()
                        .position(|c| c == token)
                        .ok_or_else(|| Error::Schema(format!("unknown category `{token}` for `{name}`")))?;
                    out.extend((0..categories.len()).map(|i| if i == j { 1.0 } else { 0.0 }));
                }
            }
        }
        Ok(out)
    }

    /// Applies imputation and encoding to a dataset. A dataset that is already
    /// in the encoded schema is returned unchanged.
    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        let output = self.output_schema();
        if ds.schema == output {
            return Ok(ds.clone());
        }
        if ds.schema != self.input_schema {
            return Err(Error::Schema("dataset schema differs from the statistics source".into()));
        }
        let names: Vec<String> = output.features.iter().map(|f| f.name.clone()).collect();
        let trajectories = ds
            .trajectories
            .iter()
            .map(|traj| {
                let steps = traj
                    .steps
                    .iter()
                    .map(|step| {
                        let encoded = self.encode_features(&step.features)?;
                        Ok(Step {
                            features: names
                                .iter()
                                .cloned()
                                .zip(encoded.into_iter().map(|v| Some(FeatureValue::Number(v))))
                                .collect(),
                            action: step.action,
                            reward: step.reward,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Trajectory { id: traj.id.clone(), steps })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            schema: output,
            n_actions: ds.n_actions,
            trajectories,
            provenance: ds.provenance.clone(),
        })
    }
}

/// Imputes missing values and one-hot encodes categoricals in `ds`, using
/// statistics computed on `stats_source` (normally the training split).
pub fn impute_and_encode(ds: &Dataset, stats_source: &Dataset) -> Result<Dataset> {
    Preprocessor::fit(stats_source)?.transform(ds)
}
