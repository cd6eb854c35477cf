use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::config::HyperGrid;
use crate::behavior::{BehaviorModel, ModelHyperparams, ModelType};
use crate::data::{episodes, StateRecord};
use crate::error::{Error, Result};
use crate::metrics::macro_auroc;
use crate::policy::StateQuery;
use crate::rng::{derive_seed, rng_for};
use crate::tree::TreeHyperparams;

/// Draws `n` candidates, each tree's depth and leaf fraction uniform over
/// the grid and independent of the other trees.
pub fn sample_candidates(grid: &HyperGrid, n: usize, seed: u64) -> Vec<ModelHyperparams> {
    let mut rng = rng_for(seed, 0);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| TreeHyperparams {
        max_depth: grid.max_depth[rng.gen_range(0..grid.max_depth.len())],
        min_leaf_fraction: grid.min_leaf_fraction[rng.gen_range(0..grid.min_leaf_fraction.len())],
        seed,
    };
    (0..n)
        .map(|_| ModelHyperparams { tree: draw(&mut rng), switch: draw(&mut rng), treatment: draw(&mut rng) })
        .collect()
}

/// Macro AUROC of a model's probabilities on labelled records.
pub fn model_auroc(model: &BehaviorModel, records: &[StateRecord]) -> Result<f64> {
    let probs = records
        .iter()
        .map(|r| model.action_probabilities(&StateQuery::from(r)))
        .collect::<Result<Vec<_>>>()?;
    let y: Vec<usize> = records.iter().map(|r| r.action).collect();
    macro_auroc(&probs, &y, model.n_actions())
}

#[derive(Debug, Clone)]
pub struct CandidateScore {
    pub hyperparams: ModelHyperparams,
    /// Validation AUROC of the uncalibrated fit, or the reason it failed.
    pub auroc: std::result::Result<f64, String>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// The winning model, calibrated on the validation records.
    pub model: BehaviorModel,
    pub best: usize,
    pub candidates: Vec<CandidateScore>,
}

fn best_index(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Random search: fit every candidate on `train`, keep the one with the
/// highest validation AUROC (first on ties) and calibrate it on `val`.
pub fn select_model(
    train: &[StateRecord],
    val: &[StateRecord],
    model_type: ModelType,
    n_actions: usize,
    candidates: &[ModelHyperparams],
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Selection("no hyperparameter candidates".into()));
    }
    let fitted: Vec<(Option<BehaviorModel>, CandidateScore)> = candidates
        .par_iter()
        .map(|hp| {
            let outcome = BehaviorModel::fit(model_type, train, n_actions, hp).and_then(|m| {
                let a = model_auroc(&m, val)?;
                Ok((m, a))
            });
            match outcome {
                Ok((m, a)) => (Some(m), CandidateScore { hyperparams: *hp, auroc: Ok(a) }),
                Err(e) => (None, CandidateScore { hyperparams: *hp, auroc: Err(e.to_string()) }),
            }
        })
        .collect();
    let scores: Vec<Option<f64>> = fitted.iter().map(|(_, c)| c.auroc.as_ref().ok().copied()).collect();
    let Some(best) = best_index(&scores) else {
        let reason = fitted[0].1.auroc.as_ref().err().cloned().unwrap_or_default();
        return Err(Error::Selection(format!("all {} candidates failed; first failure: {reason}", candidates.len())));
    };
    let (mut fitted, candidates): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    let model = fitted.swap_remove(best).expect("winner was fitted").calibrate(val)?;
    Ok(Selection { model, best, candidates })
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub best: ModelHyperparams,
    pub best_index: usize,
    /// Mean held-out AUROC per candidate; `None` if any fold failed.
    pub mean_auroc: Vec<Option<f64>>,
    pub folds: usize,
}

/// Assigns trajectories to `folds` folds after a seeded shuffle. The fold
/// count is capped to the number of trajectories and raised to at least 2.
pub fn fold_assignment(n_trajectories: usize, folds: usize, seed: u64) -> Vec<usize> {
    let folds = folds.clamp(2, n_trajectories.max(2));
    let mut order: Vec<usize> = (0..n_trajectories).collect();
    order.shuffle(&mut rng_for(seed, 0));
    let mut fold = vec![0; n_trajectories];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// k-fold cross-validation over trajectories; the candidate with the best
/// mean held-out AUROC wins, the first one on ties.
pub fn cross_validate(
    records: &[StateRecord],
    model_type: ModelType,
    n_actions: usize,
    folds: usize,
    candidates: &[ModelHyperparams],
    seed: u64,
) -> Result<CrossValidation> {
    if candidates.is_empty() {
        return Err(Error::Selection("no hyperparameter candidates".into()));
    }
    let eps = episodes(records);
    if eps.len() < 2 {
        return Err(Error::Selection("cross-validation needs at least 2 trajectories".into()));
    }
    let assignment = fold_assignment(eps.len(), folds, seed);
    let folds = folds.clamp(2, eps.len());
    let parts: Vec<(Vec<StateRecord>, Vec<StateRecord>)> = (0..folds)
        .map(|f| {
            let (mut tr, mut te) = (vec![], vec![]);
            for (e, &a) in eps.iter().zip(&assignment) {
                if a == f { te.extend_from_slice(e) } else { tr.extend_from_slice(e) }
            }
            (tr, te)
        })
        .collect();
    let mean_auroc: Vec<Option<f64>> = candidates
        .par_iter()
        .map(|hp| {
            let mut total = 0.0;
            for (tr, te) in &parts {
                let m = BehaviorModel::fit(model_type, tr, n_actions, hp).ok()?;
                total += model_auroc(&m, te).ok()?;
            }
            Some(total / folds as f64)
        })
        .collect();
    let best_index = best_index(&mean_auroc).ok_or_else(|| Error::Selection("every candidate failed in some fold".into()))?;
    Ok(CrossValidation { best: candidates[best_index], best_index, mean_auroc, folds })
}

/// Seed for a named sub-stream of a repeat.
pub(crate) fn stream(seed: u64, purpose: u64) -> u64 {
    derive_seed(seed, purpose)
}
