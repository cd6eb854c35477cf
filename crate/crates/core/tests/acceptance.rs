//! End-to-end acceptance checks. Each test prints one `[PASS]`/`[FAIL]`
//! line naming its criterion, then asserts.

use std::collections::BTreeSet;
use std::time::Instant;

use ppd_core::behavior::{compose, BehaviorModel, ModelType};
use ppd_core::data::{episodes, StateEncoder, AggregateConfig};
use ppd_core::harness::{fit_repeat, run_on_dataset, ExperimentConfig, Source};
use ppd_core::metrics::{auroc_binary, static_calibration_error};
use ppd_core::ope::{effective_sample_size, importance_weights, is_estimate, wis_estimate};
use ppd_core::policy::{Policy, PolicyDescriptor, StateQuery};
use ppd_core::rng::derive_seed;
use ppd_core::sim::{generate, monte_carlo_value, policy_chooser, ChronicConfig, ChronicSimulator, ChronicTruth, EpisodicConfig, ReturnScale, RolloutContext, SimConfig};
use ppd_core::tree::{DecisionTree, Node, TreeHyperparams};
use ppd_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, ok: bool, detail: &str) {
    println!("[{}] criterion {criterion}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} failed: {detail}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

fn quartiles(v: &[f64]) -> (f64, f64) {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
    };
    (q(0.25), q(0.75))
}

fn policies(specs: &[&str]) -> Vec<PolicyDescriptor> {
    specs.iter().map(|s| s.parse().unwrap()).collect()
}

#[test]
fn criterion_01_self_evaluation_exactness() {
    let mut failures = vec![];
    let mut slowest: f64 = 0.0;
    let cases = [
        (SimConfig::Chronic(ChronicConfig { n_patients: 2000, seed: 11, ..Default::default() }), ModelType::Dt),
        (SimConfig::Chronic(ChronicConfig { n_patients: 2000, seed: 11, ..Default::default() }), ModelType::Dts),
        (SimConfig::Chronic(ChronicConfig { n_patients: 2000, seed: 11, ..Default::default() }), ModelType::Dtbls),
        (SimConfig::Episodic(EpisodicConfig { n_patients: 2000, seed: 12, ..Default::default() }), ModelType::Dts),
    ];
    let mut checked = 0;
    for (sim, model) in cases {
        let start = Instant::now();
        let ds = sim.generate().unwrap();
        let cfg = ExperimentConfig { model, n_hyperparam_candidates: 5, ..Default::default() };
        let fit = fit_repeat(&cfg, &ds, None, 3).unwrap();
        let k = ds.n_actions;
        let target = format!("mc:k={k}").parse::<PolicyDescriptor>().unwrap().build(&fit.model, 0).unwrap();
        let eps = episodes(&fit.test);
        let w = importance_weights(target.as_ref(), &fit.model, &eps).unwrap();
        let res = wis_estimate(&w).unwrap();
        let mean: f64 = eps.iter().map(|e| e.iter().map(|r| r.reward).sum::<f64>()).sum::<f64>() / eps.len() as f64;
        if !w.iter().all(|t| t.weight == 1.0) {
            failures.push(format!("{model}: weight != 1"));
        }
        if (res.value - mean).abs() > 1e-12 {
            failures.push(format!("{model}: value {} vs mean {mean}", res.value));
        }
        if res.ess != eps.len() as f64 {
            failures.push(format!("{model}: ess {} vs n {}", res.ess, eps.len()));
        }
        checked += eps.len();
        slowest = slowest.max(start.elapsed().as_secs_f64());
    }
    let ok = failures.is_empty() && slowest < 10.0;
    report(
        1,
        ok,
        &format!("k=K self-evaluation: all weights 1, WIS = mean return, ESS = n on {checked} test trajectories over 4 fitted models (slowest simulate + fit + evaluate on 2000 trajectories: {slowest:.1}s) {failures:?}"),
    );
}

/// Generator behavior with the switch probability fixed at 0.4.
fn fixed_switch_target(mu: &[f64], prev: Option<usize>) -> Vec<f64> {
    match prev {
        None => mu.to_vec(),
        Some(p) => compose(0.4, mu, p),
    }
}

struct FixedSwitch<'a>(&'a ChronicTruth);

impl Policy for FixedSwitch<'_> {
    fn n_actions(&self) -> usize {
        self.0.n_actions()
    }

    fn probabilities(&self, q: &StateQuery) -> Result<Vec<f64>> {
        Ok(fixed_switch_target(&self.0.probabilities(q)?, q.prev_action))
    }
}

#[test]
fn criterion_02_is_consistent_with_monte_carlo() {
    let start = Instant::now();
    let cfg = ChronicConfig::default();
    let sim = ChronicSimulator::new(cfg.clone()).unwrap();
    let chooser = |c: &RolloutContext| Ok(fixed_switch_target(c.behavior, c.prev_action()));
    let (truth_value, truth_se) = monte_carlo_value(&sim, &chooser, 100_000, 999, ReturnScale::Total).unwrap();
    let mut covered = 0;
    for s in 0..50u64 {
        let ds = generate(&sim, 10_000, derive_seed(2024, s)).unwrap();
        let enc = StateEncoder::fit(&ds, AggregateConfig::default()).unwrap();
        let truth = ChronicTruth::new(cfg.clone(), &enc.layout()).unwrap();
        let target = FixedSwitch(&truth);
        let records = enc.records(&ds).unwrap();
        let eps = episodes(&records);
        let w = importance_weights(&target, &truth, &eps).unwrap();
        let est = is_estimate(&w).unwrap().value;
        let terms: Vec<f64> = w.iter().map(|t| t.weight * t.ret).collect();
        let n = terms.len() as f64;
        let var = terms.iter().map(|x| (x - est).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n + truth_se * truth_se).sqrt();
        if (est - truth_value).abs() <= 3.0 * se {
            covered += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        covered >= 45 && secs < 300.0,
        &format!("IS with true behavior denominators within 3 SE of Monte-Carlo value {truth_value:.3} in {covered}/50 seeds ({secs:.1}s)"),
    );
}

#[test]
fn criterion_03_ess_increases_with_k() {
    let cfg = ExperimentConfig {
        n_repeats: 20,
        master_seed: 3,
        source: Source::Episodic(EpisodicConfig::default()),
        policies: policies(&["mc:k=1", "mc:k=2", "mc:k=3"]),
        ..Default::default()
    };
    let ds = cfg.source.load(None).unwrap();
    let rep = run_on_dataset(&cfg, &ds, None).unwrap();
    let ess: Vec<f64> = ["mc:k=1", "mc:k=2", "mc:k=3"]
        .iter()
        .map(|p| median(rep.rows_for(p).map(|r| r.ess).collect()))
        .collect();
    let ok = rep.failures.is_empty() && ess[0] < ess[1] && ess[1] < ess[2];
    report(3, ok, &format!("episodic median ESS over 20 seeds for k = 1, 2, 3: {ess:?} (failures: {})", rep.failures.len()));
}

#[test]
fn criterion_04_top1_beats_behavior() {
    let cfg = ExperimentConfig { n_repeats: 50, master_seed: 4, policies: policies(&["behavior", "mc:k=1"]), ..Default::default() };
    let ds = cfg.source.load(None).unwrap();
    let rep = run_on_dataset(&cfg, &ds, None).unwrap();
    let wins = rep
        .rows_for("behavior")
        .zip(rep.rows_for("mc:k=1"))
        .filter(|(b, m)| b.seed == m.seed && m.value > b.value)
        .count();

    // true values of the fitted top-1 policy and of the generator behavior
    let Source::Chronic(sim_cfg) = &cfg.source else { unreachable!() };
    let sim = ChronicSimulator::new(sim_cfg.clone()).unwrap();
    let fit = fit_repeat(&cfg, &ds, None, derive_seed(cfg.master_seed, 0)).unwrap();
    let top1 = "mc:k=1".parse::<PolicyDescriptor>().unwrap().build(&fit.model, 0).unwrap();
    let chooser = policy_chooser(&fit.encoder, top1.as_ref());
    let (mc_v, mc_se) = monte_carlo_value(&sim, &chooser, 20_000, 77, ReturnScale::Total).unwrap();
    let (b_v, b_se) = monte_carlo_value(&sim, &|c: &RolloutContext| Ok(c.behavior.to_vec()), 20_000, 77, ReturnScale::Total).unwrap();
    let truly_better = mc_v - b_v > 3.0 * (mc_se * mc_se + b_se * b_se).sqrt();
    report(
        4,
        wins >= 40 && truly_better,
        &format!("WIS(top-1) > behavior mean return in {wins}/50 seeds; true top-1 value {mc_v:.2} +- {mc_se:.2} vs behavior {b_v:.2} +- {b_se:.2}"),
    );
}

#[test]
fn criterion_05_iqr_grows_with_p1() {
    let specs = ["mc_switch_adj:k=2,p1=0", "mc_switch_adj:k=2,p1=0.1", "mc_switch_adj:k=2,p1=0.3", "mc_switch_adj:k=2,p1=0.5"];
    let cfg = ExperimentConfig { n_repeats: 50, master_seed: 5, policies: policies(&specs), ..Default::default() };
    let ds = cfg.source.load(None).unwrap();
    let rep = run_on_dataset(&cfg, &ds, None).unwrap();
    let iqr: Vec<f64> = specs
        .iter()
        .map(|p| {
            let v: Vec<f64> = rep.rows_for(p).map(|r| r.value).collect();
            let (q1, q3) = quartiles(&v);
            q3 - q1
        })
        .collect();
    let ok = rep.failures.is_empty() && iqr.windows(2).all(|w| w[0] <= w[1]);
    report(5, ok, &format!("WIS IQR over 50 seeds for p1 = 0, 0.1, 0.3, 0.5 at k = 2: {iqr:?}"));
}

/// Exhaustive best split: every feature, every midpoint, explicit Gini.
fn oracle_split(x: &[Vec<f64>], y: &[usize], idx: &[usize], c: usize, min_leaf: usize) -> Option<(usize, f64, f64)> {
    let gini = |ids: &[usize]| {
        let n = ids.len() as f64;
        let mut counts = vec![0.0; c];
        for &i in ids {
            counts[y[i]] += 1.0;
        }
        1.0 - counts.iter().map(|k| (k / n) * (k / n)).sum::<f64>()
    };
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x[0].len() {
        let values: BTreeSet<u64> = idx.iter().map(|&i| x[i][f].to_bits()).collect();
        let mut values: Vec<f64> = values.into_iter().map(f64::from_bits).collect();
        values.sort_by(f64::total_cmp);
        for w in values.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][f] <= thr);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let imp = (l.len() as f64 * gini(&l) + r.len() as f64 * gini(&r)) / idx.len() as f64;
            if best.is_none_or(|(_, _, b)| imp < b - 1e-12) {
                best = Some((f, thr, imp));
            }
        }
    }
    best
}

#[test]
fn criterion_06_tree_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut splits = 0;
    let mut problems = vec![];
    for case in 0..100 {
        let n = rng.gen_range(20..=200);
        let d = rng.gen_range(1..=5);
        let c = rng.gen_range(2..=4);
        let levels = rng.gen_range(3..40);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(0..levels) as f64 * 0.25).collect()).collect();
        let y: Vec<usize> = x.iter().map(|r| if r[0] > 2.0 && rng.gen_bool(0.7) { 1 } else { rng.gen_range(0..c) }).collect();
        let hp = TreeHyperparams { max_depth: rng.gen_range(1..=6), min_leaf_fraction: [0.01, 0.02, 0.05, 0.1][rng.gen_range(0..4)], seed: 0 };
        let tree = DecisionTree::fit(&x, &y, c, &hp).unwrap();
        let min_leaf = hp.min_leaf_samples(n);
        // samples reaching each node
        let mut members: Vec<Vec<usize>> = vec![vec![]; tree.nodes().len()];
        for (i, row) in x.iter().enumerate() {
            for node in tree.path(row).unwrap() {
                members[node].push(i);
            }
        }
        let mut depth = vec![0usize; tree.nodes().len()];
        for (at, node) in tree.nodes().iter().enumerate() {
            if let Node::Split(s) = node {
                depth[s.left] = depth[at] + 1;
                depth[s.right] = depth[at] + 1;
            }
        }
        for (at, node) in tree.nodes().iter().enumerate() {
            let ids = &members[at];
            let oracle = oracle_split(&x, &y, ids, c, min_leaf);
            match node {
                Node::Split(s) => {
                    splits += 1;
                    let Some((f, thr, imp)) = oracle else {
                        problems.push(format!("case {case}: split where oracle finds none"));
                        continue;
                    };
                    let (l, r): (Vec<usize>, Vec<usize>) = ids.iter().partition(|&&i| x[i][s.feature] <= s.threshold);
                    let g = |part: &[usize]| {
                        let mut k = vec![0.0; c];
                        part.iter().for_each(|&i| k[y[i]] += 1.0);
                        let m = part.len() as f64;
                        m * (1.0 - k.iter().map(|v| (v / m) * (v / m)).sum::<f64>())
                    };
                    let chosen = (g(&l) + g(&r)) / ids.len() as f64;
                    if (chosen - imp).abs() > 1e-12 {
                        problems.push(format!("case {case}: impurity {chosen} vs oracle {imp}"));
                    }
                    if (s.feature, s.threshold) != (f, thr) {
                        // only acceptable as an exact tie with an earlier candidate
                        if (chosen - imp).abs() > 1e-12 || s.feature > f || (s.feature == f && s.threshold > thr) {
                            problems.push(format!("case {case}: split ({}, {}) vs oracle ({f}, {thr})", s.feature, s.threshold));
                        }
                    }
                }
                Node::Leaf(_) => {
                    let pure = ids.iter().all(|&i| y[i] == y[ids[0]]);
                    if !pure && depth[at] < hp.max_depth && oracle.is_some() {
                        problems.push(format!("case {case}: leaf where oracle finds a split"));
                    }
                }
            }
        }
        let back = DecisionTree::from_json(&tree.to_json().unwrap()).unwrap();
        for _ in 0..100 {
            let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..11.0)).collect();
            if back.predict_proba(&q).unwrap() != tree.predict_proba(&q).unwrap() {
                problems.push(format!("case {case}: JSON round trip changed predictions"));
                break;
            }
        }
    }
    report(6, problems.is_empty(), &format!("{splits} splits over 100 random datasets match the exhaustive Gini oracle; JSON round trips exact {problems:?}"));
}

#[test]
fn criterion_07_meta_composition() {
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-15);
    let pt = [0.5, 0.3, 0.2];
    let examples = close(&compose(0.0, &pt, 0), &[1.0, 0.0, 0.0])
        && close(&compose(0.2, &pt, 0), &[0.8, 0.12, 0.08])
        && close(&compose(1.0, &pt, 0), &[0.0, 0.6, 0.4]);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let k = rng.gen_range(2..=8);
        let mut p: Vec<f64> = (0..k).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() }).collect();
        let s: f64 = p.iter().sum();
        if s == 0.0 {
            p[0] = 1.0;
        } else {
            p.iter_mut().for_each(|v| *v /= s);
        }
        let prev = rng.gen_range(0..k);
        let ps: f64 = rng.gen();
        let out = compose(ps, &p, prev);
        worst = worst.max((out.iter().sum::<f64>() - 1.0).abs());
        if out.iter().any(|&v| v < 0.0) || out[prev] != 1.0 - ps {
            worst = f64::INFINITY;
        }
    }
    // and through fitted models
    let ds = SimConfig::Chronic(ChronicConfig { n_patients: 600, seed: 7, ..Default::default() }).generate().unwrap();
    for model in [ModelType::Dts, ModelType::Dtbls] {
        let cfg = ExperimentConfig { model, n_hyperparam_candidates: 3, ..Default::default() };
        let fit = fit_repeat(&cfg, &ds, None, 1).unwrap();
        let dim = fit.encoder.dim();
        for _ in 0..10_000 {
            let state: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..80.0)).collect();
            let prev = if rng.gen_bool(0.2) { None } else { Some(rng.gen_range(0..4)) };
            let stage = if prev.is_none() { 1 } else { rng.gen_range(2..7) };
            let p = fit.model.action_probabilities(&StateQuery { state: &state, prev_action: prev, stage }).unwrap();
            worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
            if p.iter().any(|&v| v < 0.0) {
                worst = f64::INFINITY;
            }
            if let (BehaviorModel::Dts(me), Some(a)) = (&fit.model, prev) {
                let ps = me.switch_probability(&state).unwrap();
                if p[a] != 1.0 - ps {
                    worst = f64::INFINITY;
                }
            }
        }
    }
    report(7, examples && worst <= 1e-9, &format!("composition examples exact; 10^4 random and 2 x 10^4 fitted compositions on the simplex (max deviation {worst:e})"));
}

#[test]
fn criterion_08_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut auroc_ok = true;
    for _ in 0..200 {
        let n = rng.gen_range(2..=500);
        let levels = rng.gen_range(2..50);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let pos: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let (mut num, mut den) = (0u64, 0u64);
        for i in 0..n {
            for j in 0..n {
                if pos[i] && !pos[j] {
                    den += 2;
                    num += if scores[i] > scores[j] { 2 } else if scores[i] == scores[j] { 1 } else { 0 };
                }
            }
        }
        let expected = if den == 0 { None } else { Some(num as f64 / den as f64) };
        auroc_ok &= auroc_binary(&scores, &pos) == expected;
    }
    let mut sce_err: f64 = 0.0;
    for _ in 0..100 {
        let (n, c) = (200, 3);
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..c).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect()
            })
            .collect();
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let mut total = 0.0;
        for class in 0..c {
            for b in 0..10 {
                let (mut m, mut hit, mut conf) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    let p = probs[i][class];
                    let bin = ((p * 10.0) as usize).min(9);
                    if bin == b {
                        m += 1.0;
                        conf += p;
                        if y[i] == class {
                            hit += 1.0;
                        }
                    }
                }
                if m > 0.0 {
                    total += m / n as f64 * (hit / m - conf / m).abs();
                }
            }
        }
        let reference = total / c as f64;
        sce_err = sce_err.max((static_calibration_error(&probs, &y, c, 10).unwrap() - reference).abs());
    }
    let ess_ok = effective_sample_size(&[1.0; 4]).unwrap() == 4.0
        && effective_sample_size(&[2.0, 0.0, 0.0, 0.0]).unwrap() == 1.0
        && effective_sample_size(&[1.0, 2.0, 3.0]).unwrap() == 18.0 / 7.0;
    report(
        8,
        auroc_ok && sce_err <= 1e-12 && ess_ok,
        &format!("AUROC equals pair counting on 200 cases (n <= 500): {auroc_ok}; SCE max deviation {sce_err:e}; ESS cases exact: {ess_ok}"),
    );
}

/// Chronic variant whose first treatment follows a strong age rule.
fn distinct_baseline_config() -> ChronicConfig {
    ChronicConfig {
        baseline_logits: vec![0.5, 0.0, 0.0, -1.0],
        baseline_age_slopes: vec![0.0, 3.0, -3.0, 0.0],
        ..Default::default()
    }
}

#[test]
fn criterion_09_structured_models_predict_better() {
    let source = Source::Chronic(distinct_baseline_config());
    let ds = source.load(None).unwrap();
    let mut medians = vec![];
    for model in [ModelType::Dt, ModelType::Dts, ModelType::Dtbls] {
        let cfg = ExperimentConfig { n_repeats: 20, master_seed: 9, model, source: source.clone(), policies: policies(&["behavior"]), ..Default::default() };
        let rep = run_on_dataset(&cfg, &ds, None).unwrap();
        medians.push(median(rep.rows.iter().map(|r| r.auroc).collect()));
    }
    let ok = medians[2] >= medians[1] && medians[1] >= medians[0];
    report(9, ok, &format!("median held-out AUROC over 20 seeds: DT {:.4}, DT-S {:.4}, DT-BLS {:.4}", medians[0], medians[1], medians[2]));
}

#[test]
fn criterion_10_pipeline_is_deterministic_and_fast() {
    let start = Instant::now();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut contents = vec![];
    for d in &dirs {
        let cfg = ExperimentConfig { master_seed: 10, output_dir: Some(d.path().to_path_buf()), ..Default::default() };
        let rep = ppd_core::harness::run_experiment(&cfg, None).unwrap();
        assert_eq!(rep.rows.len() + rep.failures.len(), 50 * 6);
        let files: Vec<(String, Vec<u8>)> = ["rows.csv", "failures.csv", "summary.csv", "per_k.csv", "per_p1.csv"]
            .iter()
            .map(|f| (f.to_string(), std::fs::read(d.path().join(f)).unwrap()))
            .collect();
        contents.push(files);
    }
    let secs = start.elapsed().as_secs_f64();
    let identical = contents[0] == contents[1];
    report(10, identical && secs < 600.0, &format!("two 50-repeat runs (2000 trajectories, 30 candidates, 6 policies, WIS) byte-identical: {identical}; {secs:.1}s for both"));
}
