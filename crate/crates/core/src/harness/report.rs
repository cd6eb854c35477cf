use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ope::aggregate_splits;

/// One (repeat, policy) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub repeat: usize,
    pub seed: u64,
    pub model: String,
    pub policy: String,
    pub policy_type: String,
    pub k: Option<usize>,
    pub p1: Option<f64>,
    pub epsilon: f64,
    pub estimator: String,
    pub normalization: String,
    pub value: f64,
    pub ess: f64,
    pub n: usize,
    pub auroc: f64,
    pub sce: f64,
    /// Share of switch-adjusted decisions whose adjusted probability was
    /// clamped into [0, 1].
    pub clamp_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub repeat: usize,
    pub seed: u64,
    /// Policy label, or `*` when the whole repeat failed.
    pub policy: String,
    pub reason: String,
}

/// Median and quartiles of one policy's rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub policy_type: String,
    pub k: Option<usize>,
    pub p1: Option<f64>,
    pub epsilon: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub value_median: f64,
    pub value_q1: f64,
    pub value_q3: f64,
    pub ess_median: f64,
    pub ess_q1: f64,
    pub ess_q3: f64,
    pub auroc_median: f64,
    pub sce_median: f64,
}

impl SummaryRow {
    pub fn value_iqr(&self) -> f64 {
        self.value_q3 - self.value_q1
    }
}

/// Per-policy summaries, in order of first appearance in `rows`. Failures
/// count against the policy they name; whole-repeat failures count against
/// every policy.
pub fn summarize(rows: &[ReportRow], failures: &[FailureRow]) -> Result<Vec<SummaryRow>> {
    let mut order: Vec<&str> = vec![];
    let mut groups: BTreeMap<&str, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(r.policy.as_str()) {
            order.push(&r.policy);
        }
        groups.entry(&r.policy).or_default().push(r);
    }
    let mut out = vec![];
    for policy in order {
        let g = &groups[policy];
        let col = |f: fn(&ReportRow) -> f64| g.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let value = aggregate_splits(&col(|r| r.value))?;
        let ess = aggregate_splits(&col(|r| r.ess))?;
        let auroc = aggregate_splits(&col(|r| r.auroc))?;
        let sce = aggregate_splits(&col(|r| r.sce))?;
        let first = g[0];
        out.push(SummaryRow {
            policy: policy.to_string(),
            policy_type: first.policy_type.clone(),
            k: first.k,
            p1: first.p1,
            epsilon: first.epsilon,
            n_ok: g.len(),
            n_failed: failures.iter().filter(|f| f.policy == policy || f.policy == "*").count(),
            value_median: value.median,
            value_q1: value.q1,
            value_q3: value.q3,
            ess_median: ess.median,
            ess_q1: ess.q1,
            ess_q3: ess.q3,
            auroc_median: auroc.median,
            sce_median: sce.median,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct PerKRow<'a> {
    policy_type: &'a str,
    k: usize,
    p1: Option<f64>,
    epsilon: f64,
    value_median: f64,
    value_q1: f64,
    value_q3: f64,
    ess_median: f64,
}

#[derive(Debug, Serialize)]
struct PerP1Row {
    k: usize,
    p1: f64,
    value_median: f64,
    value_q1: f64,
    value_q3: f64,
    value_iqr: f64,
    ess_median: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_summary(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    write_csv(path, summary)
}

pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?)
}

pub fn read_failures(path: &Path) -> Result<Vec<FailureRow>> {
    if !path.exists() {
        return Ok(vec![]);
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<FailureRow>, _>>()?)
}

/// Writes `rows.csv`, `failures.csv`, `summary.csv`, `per_k.csv` and
/// `per_p1.csv` into `dir`.
pub fn write_reports(dir: &Path, rows: &[ReportRow], failures: &[FailureRow], summary: &[SummaryRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("rows.csv"), rows)?;
    if failures.is_empty() {
        fs::write(dir.join("failures.csv"), "repeat,seed,policy,reason\n")?;
    } else {
        write_csv(&dir.join("failures.csv"), failures)?;
    }
    write_csv(&dir.join("summary.csv"), summary)?;
    let mut per_k: Vec<&SummaryRow> = summary.iter().filter(|s| s.k.is_some()).collect();
    per_k.sort_by(|a, b| {
        (a.policy_type.as_str(), a.k, a.p1.unwrap_or(0.0).to_bits(), a.epsilon.to_bits())
            .cmp(&(b.policy_type.as_str(), b.k, b.p1.unwrap_or(0.0).to_bits(), b.epsilon.to_bits()))
    });
    write_csv(
        &dir.join("per_k.csv"),
        per_k.iter().map(|s| PerKRow {
            policy_type: &s.policy_type,
            k: s.k.unwrap_or(0),
            p1: s.p1,
            epsilon: s.epsilon,
            value_median: s.value_median,
            value_q1: s.value_q1,
            value_q3: s.value_q3,
            ess_median: s.ess_median,
        }),
    )?;
    let mut per_p1: Vec<&SummaryRow> = summary.iter().filter(|s| s.p1.is_some()).collect();
    per_p1.sort_by(|a, b| a.k.cmp(&b.k).then(a.p1.unwrap_or(0.0).total_cmp(&b.p1.unwrap_or(0.0))));
    write_csv(
        &dir.join("per_p1.csv"),
        per_p1.iter().map(|s| PerP1Row {
            k: s.k.unwrap_or(0),
            p1: s.p1.unwrap_or(0.0),
            value_median: s.value_median,
            value_q1: s.value_q1,
            value_q3: s.value_q3,
            value_iqr: s.value_iqr(),
            ess_median: s.ess_median,
        }),
    )
}
