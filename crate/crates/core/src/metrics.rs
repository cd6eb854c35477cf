//! Discrimination and calibration metrics for probabilistic classifiers.

use crate::error::{Error, Result};

/// Area under the ROC curve for binary labels, computed from midranks so
/// tied scores count one half. `None` when either class is absent.
pub fn auroc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count() as u128;
    let n_neg = positive.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // doubled ranks keep midranks integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let doubled = (i + 1 + j) as u128;
        rank_sum2 += doubled * order[i..j].iter().filter(|&&o| positive[o]).count() as u128;
        i = j;
    }
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Some(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// One-vs-rest AUROC averaged over classes that have both positive and
/// negative examples.
pub fn macro_auroc<R: AsRef<[f64]>>(probs: &[R], y: &[usize], n_classes: usize) -> Result<f64> {
    check(probs, y, n_classes)?;
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..n_classes {
        let scores: Vec<f64> = probs.iter().map(|p| p.as_ref()[c]).collect();
        let positive: Vec<bool> = y.iter().map(|&l| l == c).collect();
        if let Some(a) = auroc_binary(&scores, &positive) {
            total += a;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Validation("AUROC undefined: no class has both positives and negatives".into()));
    }
    Ok(total / used as f64)
}

fn check<R: AsRef<[f64]>>(probs: &[R], y: &[usize], n_classes: usize) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::EmptyInput("metric inputs"));
    }
    if probs.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: probs.len(), got: y.len() });
    }
    for (p, &l) in probs.iter().zip(y) {
        if p.as_ref().len() != n_classes {
            return Err(Error::DimensionMismatch { expected: n_classes, got: p.as_ref().len() });
        }
        if l >= n_classes {
            return Err(Error::Validation(format!("label {l} >= n_classes {n_classes}")));
        }
    }
    Ok(())
}

/// Static calibration error as a fraction in [0, 1].
///
/// For each class, predictions are placed into `n_bins` equal-width bins on
/// [0, 1]; the class error is the sample-weighted mean of
/// |empirical frequency - mean predicted probability| over non-empty bins.
/// The result averages the class errors.
pub fn static_calibration_error<R: AsRef<[f64]>>(probs: &[R], y: &[usize], n_classes: usize, n_bins: usize) -> Result<f64> {
    check(probs, y, n_classes)?;
    if n_bins == 0 {
        return Err(Error::Validation("n_bins must be positive".into()));
    }
    let n = probs.len() as f64;
    let mut total = 0.0;
    for c in 0..n_classes {
        let mut count = vec![0usize; n_bins];
        let mut hits = vec![0usize; n_bins];
        let mut conf = vec![0.0f64; n_bins];
        for (p, &l) in probs.iter().zip(y) {
            let q = p.as_ref()[c];
            let b = ((q * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1);
            count[b] += 1;
            conf[b] += q;
            hits[b] += usize::from(l == c);
        }
        total += (0..n_bins)
            .filter(|&b| count[b] > 0)
            .map(|b| {
                let m = count[b] as f64;
                m / n * (hits[b] as f64 / m - conf[b] / m).abs()
            })
            .sum::<f64>();
    }
    Ok(total / n_classes as f64)
}
