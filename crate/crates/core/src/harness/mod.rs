//! Experiment orchestration: repeated trajectory splits, random
//! hyperparameter search, calibration, policy construction and
//! off-policy evaluation, with CSV reports.

mod config;
mod report;
mod select;

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::behavior::BehaviorModel;
use crate::data::{episodes, split, Dataset, StateEncoder, StateRecord};
use crate::error::{Error, Result};
use crate::metrics::{macro_auroc, static_calibration_error};
use crate::ope::{behavior_value, estimate, importance_weights, normalize_value};
use crate::policy::{PolicyDescriptor, PolicyKind, StateQuery};
use crate::rng::{derive_seed, rng_for};

pub use config::{Auxiliary, ExperimentConfig, HyperGrid, Source, SplitFractions};
pub use report::{
    read_failures, read_rows, summarize, write_reports, write_rows, write_summary, FailureRow, ReportRow, SummaryRow,
};
pub use select::{cross_validate, fold_assignment, model_auroc, sample_candidates, select_model, CandidateScore, CrossValidation, Selection};

use select::stream;

const STREAM_SPLIT: u64 = 0;
const STREAM_CANDIDATES: u64 = 1;
const STREAM_POLICY: u64 = 2;
const STREAM_AUXILIARY: u64 = 3;

/// Everything fitted in one repeat, before policies are evaluated.
pub struct FittedRepeat {
    pub seed: u64,
    pub encoder: StateEncoder,
    pub model: BehaviorModel,
    pub train: Vec<StateRecord>,
    pub validation: Vec<StateRecord>,
    pub test: Vec<StateRecord>,
    pub test_auroc: f64,
    /// Static calibration error on the test records, in percent.
    pub test_sce: f64,
}

fn check_disjoint(parts: [&Dataset; 3]) -> Result<()> {
    let ids: Vec<HashSet<&str>> = parts.iter().map(|d| d.ids()).collect();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if !ids[i].is_disjoint(&ids[j]) {
            return Err(Error::Validation("train, validation and test trajectories overlap".into()));
        }
    }
    Ok(())
}

/// Split, encode, select, calibrate and attach outcomes for one seed.
pub fn fit_repeat(cfg: &ExperimentConfig, ds: &Dataset, auxiliary: Option<&Dataset>, seed: u64) -> Result<FittedRepeat> {
    let (train, val, test) = split(ds, &cfg.split.spec(stream(seed, STREAM_SPLIT)))?;
    check_disjoint([&train, &val, &test])?;
    let encoder = StateEncoder::fit(&train, cfg.aggregates)?;
    let mut train_records = encoder.records(&train)?;
    if let (Some(aux_ds), Some(aux)) = (auxiliary, &cfg.auxiliary) {
        let mut idx: Vec<usize> = (0..aux_ds.len()).collect();
        idx.shuffle(&mut rng_for(stream(seed, STREAM_AUXILIARY), 0));
        idx.truncate((aux.fraction * aux_ds.len() as f64).round() as usize);
        idx.sort_unstable();
        let extra = aux_ds.with_trajectories(idx.iter().map(|&i| aux_ds.trajectories[i].clone()).collect());
        let overlap = extra.ids().iter().any(|id| val.ids().contains(id) || test.ids().contains(id));
        if overlap {
            return Err(Error::Validation("auxiliary trajectories overlap validation or test data".into()));
        }
        train_records.extend(encoder.records(&extra)?);
    }
    let val_records = encoder.records(&val)?;
    let test_records = encoder.records(&test)?;

    let candidates = sample_candidates(&cfg.grid, cfg.n_hyperparam_candidates, stream(seed, STREAM_CANDIDATES));
    let selection = select_model(&train_records, &val_records, cfg.model, ds.n_actions, &candidates)?;
    let model = selection
        .model
        .attach_outcomes(&train_records, cfg.outcome)?
        .with_feature_names(&encoder.layout().names)?;

    let (test_auroc, test_sce) = held_out_metrics(&model, &test_records)?;
    Ok(FittedRepeat {
        seed,
        encoder,
        model,
        train: train_records,
        validation: val_records,
        test: test_records,
        test_auroc,
        test_sce,
    })
}

/// Macro AUROC and static calibration error (percent) of a fitted model's
/// action probabilities on held-out records.
pub fn held_out_metrics(model: &BehaviorModel, records: &[StateRecord]) -> Result<(f64, f64)> {
    let probs = records
        .iter()
        .map(|r| model.action_probabilities(&StateQuery::from(r)))
        .collect::<Result<Vec<_>>>()?;
    let y: Vec<usize> = records.iter().map(|r| r.action).collect();
    let auroc = macro_auroc(&probs, &y, model.n_actions())?;
    let sce = 100.0 * static_calibration_error(&probs, &y, model.n_actions(), 10)?;
    Ok((auroc, sce))
}

/// Evaluates one policy on the repeat's test trajectories.
pub fn evaluate_policy(cfg: &ExperimentConfig, fit: &FittedRepeat, d: &PolicyDescriptor, repeat: usize) -> Result<ReportRow> {
    let policy = d.build(&fit.model, stream(fit.seed, STREAM_POLICY))?;
    let eps = episodes(&fit.test);
    let weights = importance_weights(policy.as_ref(), &fit.model, &eps)?;
    let result = estimate(&weights, cfg.estimator, cfg.normalization)?;
    let value = normalize_value(result.value, behavior_value(&eps, cfg.normalization), cfg.normalization);
    let clamp_rate = policy.clamp_stats().map(|(c, n)| if n == 0 { 0.0 } else { c as f64 / n as f64 });
    let uses_k = matches!(d.kind, PolicyKind::Mc | PolicyKind::McO | PolicyKind::McSwitchAdj);
    Ok(ReportRow {
        repeat,
        seed: fit.seed,
        model: fit.model.model_type().to_string(),
        policy: d.to_string(),
        policy_type: d.kind.as_str().to_string(),
        k: uses_k.then(|| d.k_value()),
        p1: (d.kind == PolicyKind::McSwitchAdj).then_some(d.p1),
        epsilon: d.epsilon,
        estimator: cfg.estimator.to_string(),
        normalization: cfg.normalization.to_string(),
        value,
        ess: result.ess,
        n: result.n,
        auroc: fit.test_auroc,
        sce: fit.test_sce,
        clamp_rate,
    })
}

/// Rows, failures and per-policy summary of a finished experiment.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<FailureRow>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_reports(dir, &self.rows, &self.failures, &self.summary)
    }

    pub fn rows_for<'a>(&'a self, policy: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.policy == policy)
    }
}

fn run_repeat(cfg: &ExperimentConfig, ds: &Dataset, aux: Option<&Dataset>, repeat: usize) -> (Vec<ReportRow>, Vec<FailureRow>) {
    let seed = derive_seed(cfg.master_seed, repeat as u64);
    let fail = |policy: String, e: Error| FailureRow { repeat, seed, policy, reason: e.to_string() };
    let fit = match fit_repeat(cfg, ds, aux, seed) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("repeat {repeat} (seed {seed}) failed: {e}");
            return (vec![], vec![fail("*".into(), e)]);
        }
    };
    let mut rows = vec![];
    let mut failures = vec![];
    for d in &cfg.policies {
        match evaluate_policy(cfg, &fit, d, repeat) {
            Ok(r) => rows.push(r),
            Err(e) => {
                log::warn!("repeat {repeat} (seed {seed}), policy {d}: {e}");
                failures.push(fail(d.to_string(), e));
            }
        }
    }
    log::info!("repeat {repeat} done: test AUROC {:.4}", fit.test_auroc);
    (rows, failures)
}

/// Runs every repeat on an already loaded dataset.
pub fn run_on_dataset(cfg: &ExperimentConfig, ds: &Dataset, auxiliary: Option<&Dataset>) -> Result<ExperimentReport> {
    cfg.validate()?;
    for d in &cfg.policies {
        d.validate(ds.n_actions)?;
    }
    let per_repeat: Vec<(Vec<ReportRow>, Vec<FailureRow>)> =
        (0..cfg.n_repeats).into_par_iter().map(|r| run_repeat(cfg, ds, auxiliary, r)).collect();
    let mut rows = vec![];
    let mut failures = vec![];
    for (r, f) in per_repeat {
        rows.extend(r);
        failures.extend(f);
    }
    let summary = summarize(&rows, &failures)?;
    Ok(ExperimentReport { rows, failures, summary })
}

/// Loads or simulates the data, runs the experiment and, when the config
/// names an output directory, writes the reports there.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: Option<&Path>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ds = cfg.source.load(base_dir)?;
    let aux = match &cfg.auxiliary {
        Some(a) => Some(Source::File { path: a.path.clone(), format: a.format }.load(base_dir)?),
        None => None,
    };
    let report = run_on_dataset(cfg, &ds, aux.as_ref())?;
    if let Some(dir) = &cfg.output_dir {
        let dir = match base_dir {
            Some(b) if dir.is_relative() => b.join(dir),
            _ => dir.clone(),
        };
        report.write(&dir)?;
    }
    Ok(report)
}
