use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::behavior::{ModelType, OutcomeKind};
use crate::data::{load_dataset, AggregateConfig, Dataset, Format, SplitSpec};
use crate::error::{Error, Result};
use crate::ope::{Estimator, Normalization};
use crate::policy::{default_policies, PolicyDescriptor};
use crate::sim::{ChronicConfig, EpisodicConfig, SimConfig};

/// Where experiment data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    File {
        path: PathBuf,
        /// Inferred from the extension when omitted.
        #[serde(default)]
        format: Option<Format>,
    },
    Chronic(ChronicConfig),
    Episodic(EpisodicConfig),
}

impl Default for Source {
    fn default() -> Self {
        Source::Chronic(ChronicConfig::default())
    }
}

impl Source {
    /// Relative file paths resolve against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<Dataset> {
        match self {
            Source::File { path, format } => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let format = match format {
                    Some(f) => *f,
                    None => Format::from_path(&path)?,
                };
                load_dataset(&path, format)
            }
            Source::Chronic(c) => SimConfig::Chronic(c.clone()).generate(),
            Source::Episodic(c) => SimConfig::Episodic(c.clone()).generate(),
        }
    }

    pub fn sim_config(&self) -> Option<SimConfig> {
        match self {
            Source::File { .. } => None,
            Source::Chronic(c) => Some(SimConfig::Chronic(c.clone())),
            Source::Episodic(c) => Some(SimConfig::Episodic(c.clone())),
        }
    }
}

/// Search space for tree hyperparameters; candidates draw each value
/// uniformly and independently for every tree of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub max_depth: Vec<usize>,
    pub min_leaf_fraction: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self { max_depth: (2..=9).collect(), min_leaf_fraction: vec![0.01, 0.02, 0.03, 0.04, 0.05] }
    }
}

impl HyperGrid {
    pub fn single(max_depth: usize, min_leaf_fraction: f64) -> Self {
        Self { max_depth: vec![max_depth], min_leaf_fraction: vec![min_leaf_fraction] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_depth.is_empty() || self.min_leaf_fraction.is_empty() {
            return Err(Error::InvalidConfig("hyperparameter grid must not be empty".into()));
        }
        if self.max_depth.contains(&0) {
            return Err(Error::InvalidConfig("max_depth values must be at least 1".into()));
        }
        if self.min_leaf_fraction.iter().any(|f| !(*f > 0.0 && *f < 0.5)) {
            return Err(Error::InvalidConfig("min_leaf_fraction values must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Extra trajectories used only for fitting behavior trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Auxiliary {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<Format>,
    /// Share of the auxiliary trajectories drawn (per repeat) into training.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train_fraction: f64,
    pub validation_fraction_of_train: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train_fraction: 0.8, validation_fraction_of_train: 0.2 }
    }
}

impl SplitFractions {
    pub fn spec(&self, seed: u64) -> SplitSpec {
        SplitSpec { seed, train_fraction: self.train_fraction, validation_fraction_of_train: self.validation_fraction_of_train }
    }
}

/// Experiment definition, usually read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub n_repeats: usize,
    pub model: ModelType,
    pub n_hyperparam_candidates: usize,
    pub estimator: Estimator,
    pub normalization: Normalization,
    pub outcome: OutcomeKind,
    pub output_dir: Option<PathBuf>,
    pub source: Source,
    pub split: SplitFractions,
    pub aggregates: AggregateConfig,
    pub grid: HyperGrid,
    pub policies: Vec<PolicyDescriptor>,
    pub auxiliary: Option<Auxiliary>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            n_repeats: 50,
            model: ModelType::Dts,
            n_hyperparam_candidates: 30,
            estimator: Estimator::Wis,
            normalization: Normalization::Absolute,
            outcome: OutcomeKind::Reward,
            output_dir: None,
            source: Source::default(),
            split: SplitFractions::default(),
            aggregates: AggregateConfig::default(),
            grid: HyperGrid::default(),
            policies: default_policies(),
            auxiliary: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.n_repeats < 1 {
            return Err(Error::InvalidConfig("n_repeats must be at least 1".into()));
        }
        if self.n_hyperparam_candidates < 1 {
            return Err(Error::InvalidConfig("n_hyperparam_candidates must be at least 1".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::InvalidConfig("at least one policy is required".into()));
        }
        if let Some(d) = self.policies.iter().find(|d| d.k == Some(0)) {
            return Err(Error::InvalidPolicy(format!("`{d}`: k = 0 is out of range; k must lie in [1, K]")));
        }
        self.grid.validate()?;
        if let Some(aux) = &self.auxiliary {
            if !(0.0..=1.0).contains(&aux.fraction) {
                return Err(Error::InvalidConfig("auxiliary fraction must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyKind;

    #[test]
    fn defaults_and_toml_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.n_repeats, 50);
        assert_eq!(cfg.n_hyperparam_candidates, 30);
        assert_eq!(cfg.policies.len(), 6);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            master_seed = 7
            n_repeats = 3
            model = "dtbls"

            [source]
            kind = "episodic"
            n_patients = 300

            [[policies]]
            type = "mc"
            k = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.model, ModelType::Dtbls);
        assert!(matches!(&cfg.source, Source::Episodic(e) if e.n_patients == 300 && e.horizon == 6));
        assert_eq!(cfg.policies, vec![PolicyDescriptor::new(PolicyKind::Mc).with_k(2)]);
        assert!(ExperimentConfig::from_toml("n_repeats = 0").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }
}
