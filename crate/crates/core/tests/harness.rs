use ppd_core::behavior::{BehaviorModel, ModelType};
use ppd_core::data::{split, AggregateConfig, StateEncoder};
use ppd_core::harness::{
    cross_validate, fit_repeat, fold_assignment, model_auroc, read_failures, read_rows, run_experiment, run_on_dataset, sample_candidates,
    select_model, ExperimentConfig, HyperGrid, Source, SplitFractions,
};
use ppd_core::policy::PolicyDescriptor;
use ppd_core::sim::{ChronicConfig, SimConfig};

fn small_source() -> Source {
    Source::Chronic(ChronicConfig { n_patients: 400, ..Default::default() })
}

fn encoded_split(seed: u64) -> (Vec<ppd_core::data::StateRecord>, Vec<ppd_core::data::StateRecord>) {
    let ds = SimConfig::Chronic(ChronicConfig { n_patients: 400, seed, ..Default::default() }).generate().unwrap();
    let (train, val, _) = split(&ds, &SplitFractions::default().spec(seed)).unwrap();
    let enc = StateEncoder::fit(&train, AggregateConfig::default()).unwrap();
    (enc.records(&train).unwrap(), enc.records(&val).unwrap())
}

#[test]
fn selection_winner_is_the_best_candidate() {
    let (train, val) = encoded_split(1);
    let candidates = sample_candidates(&HyperGrid::default(), 12, 3);
    let sel = select_model(&train, &val, ModelType::Dts, 4, &candidates).unwrap();
    let scores: Vec<f64> = candidates
        .iter()
        .map(|hp| model_auroc(&BehaviorModel::fit(ModelType::Dts, &train, 4, hp).unwrap(), &val).unwrap())
        .collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(scores[sel.best], best);
    assert_eq!(scores.iter().position(|&s| s == best), Some(sel.best));
    for (c, s) in sel.candidates.iter().zip(&scores) {
        assert_eq!(c.auroc.as_ref().unwrap(), s);
    }
}

#[test]
fn cross_validation_matches_reference_loop() {
    let (records, _) = encoded_split(2);
    let candidates = sample_candidates(&HyperGrid::default(), 5, 4);
    let cv = cross_validate(&records, ModelType::Dt, 4, 3, &candidates, 9).unwrap();

    let eps = ppd_core::data::episodes(&records);
    let folds = fold_assignment(eps.len(), 3, 9);
    for (i, hp) in candidates.iter().enumerate() {
        let mut total = 0.0;
        for f in 0..3 {
            let tr: Vec<_> = eps.iter().zip(&folds).filter(|(_, &a)| a != f).flat_map(|(e, _)| e.iter().cloned()).collect();
            let te: Vec<_> = eps.iter().zip(&folds).filter(|(_, &a)| a == f).flat_map(|(e, _)| e.iter().cloned()).collect();
            total += model_auroc(&BehaviorModel::fit(ModelType::Dt, &tr, 4, hp).unwrap(), &te).unwrap();
        }
        assert!((cv.mean_auroc[i].unwrap() - total / 3.0).abs() < 1e-12);
    }
    let best = cv.mean_auroc.iter().map(|v| v.unwrap()).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(cv.mean_auroc[cv.best_index], Some(best));
}

#[test]
fn folds_are_balanced_and_seeded() {
    let f = fold_assignment(103, 5, 1);
    for k in 0..5 {
        let n = f.iter().filter(|&&a| a == k).count();
        assert!(n == 20 || n == 21);
    }
    assert_eq!(f, fold_assignment(103, 5, 1));
    assert_ne!(f, fold_assignment(103, 5, 2));
}

#[test]
fn repeats_split_disjointly_and_report_test_metrics() {
    let cfg = ExperimentConfig { source: small_source(), n_hyperparam_candidates: 4, ..Default::default() };
    let ds = cfg.source.load(None).unwrap();
    let fit = fit_repeat(&cfg, &ds, None, 5).unwrap();
    let ids = |r: &[ppd_core::data::StateRecord]| r.iter().map(|x| x.trajectory_id.clone()).collect::<std::collections::HashSet<_>>();
    assert!(ids(&fit.train).is_disjoint(&ids(&fit.test)));
    assert!(ids(&fit.validation).is_disjoint(&ids(&fit.test)));
    assert!(ids(&fit.train).is_disjoint(&ids(&fit.validation)));
    assert!(fit.test_auroc > 0.5 && fit.test_auroc <= 1.0);
    assert!(fit.test_sce >= 0.0 && fit.test_sce <= 100.0);
}

#[test]
fn experiment_writes_readable_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        source: small_source(),
        n_repeats: 3,
        n_hyperparam_candidates: 3,
        output_dir: Some(dir.path().to_path_buf()),
        policies: ["behavior", "mc:k=2", "mc_switch_adj:k=2,p1=0.2", "random"].iter().map(|s| s.parse().unwrap()).collect(),
        ..Default::default()
    };
    let report = run_experiment(&cfg, None).unwrap();
    assert_eq!(report.rows.len() + report.failures.len(), 12);
    assert_eq!(read_rows(&dir.path().join("rows.csv")).unwrap(), report.rows);
    assert_eq!(read_failures(&dir.path().join("failures.csv")).unwrap(), report.failures);
    for f in ["summary.csv", "per_k.csv", "per_p1.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    for r in report.rows_for("behavior") {
        assert_eq!(r.ess, r.n as f64);
    }
    let adj: Vec<_> = report.rows_for("mc_switch_adj:k=2,p1=0.2").collect();
    assert!(adj.iter().all(|r| r.clamp_rate.is_some()));
}

#[test]
fn plain_trees_reject_switch_adjustment() {
    let cfg = ExperimentConfig {
        source: small_source(),
        model: ModelType::Dt,
        n_repeats: 2,
        n_hyperparam_candidates: 2,
        policies: vec!["mc_switch_adj:k=2,p1=0.2".parse::<PolicyDescriptor>().unwrap()],
        ..Default::default()
    };
    let ds = cfg.source.load(None).unwrap();
    let rep = run_on_dataset(&cfg, &ds, None).unwrap();
    assert!(rep.rows.is_empty());
    assert_eq!(rep.failures.len(), 2);
    assert!(rep.failures.iter().all(|f| f.policy == "mc_switch_adj:k=2,p1=0.2"));
}

#[test]
fn configs_round_trip_through_toml() {
    let text = r#"
        master_seed = 7
        n_repeats = 4
        model = "dtbls"
        policies = ["behavior", { type = "mc", k = 2, epsilon = 0.01 }]

        [source]
        kind = "episodic"
        n_patients = 300
    "#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    assert_eq!(cfg.model, ModelType::Dtbls);
    assert_eq!(cfg.policies[1].to_string(), "mc:k=2,epsilon=0.01");
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    assert!(ExperimentConfig::from_toml("n_repeat = 3").is_err());
    assert!(ExperimentConfig::from_toml("policies = [\"mc:k=0\"]").is_err());
}

#[test]
fn results_do_not_depend_on_policy_order() {
    let mk = |p: &[&str]| ExperimentConfig {
        source: small_source(),
        n_repeats: 2,
        n_hyperparam_candidates: 3,
        policies: p.iter().map(|s| s.parse().unwrap()).collect(),
        ..Default::default()
    };
    let ds = small_source().load(None).unwrap();
    let a = run_on_dataset(&mk(&["mc:k=1", "random"]), &ds, None).unwrap();
    let b = run_on_dataset(&mk(&["random", "mc:k=1"]), &ds, None).unwrap();
    for p in ["mc:k=1", "random"] {
        assert_eq!(a.rows_for(p).collect::<Vec<_>>(), b.rows_for(p).collect::<Vec<_>>());
    }
}
