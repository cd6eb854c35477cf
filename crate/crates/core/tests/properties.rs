use ppd_core::behavior::{compose, exclude_previous};
use ppd_core::calibration::Calibrator;
use ppd_core::ope::{aggregate_splits, effective_sample_size, estimate, Estimator, Normalization, TrajectoryWeight};
use ppd_core::policy::{top_k_probabilities, top_k_set, PolicyDescriptor};
use ppd_core::tree::{DecisionTree, TreeHyperparams};
use proptest::prelude::*;

fn simplex(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.001f64..1.0], k)
        .prop_filter("some mass", |v| v.iter().sum::<f64>() > 0.0)
        .prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
}

fn on_simplex(p: &[f64]) -> bool {
    p.iter().all(|&v| v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

proptest! {
    #[test]
    fn top_k_keeps_ratios_inside_the_set(p in simplex(2..=8), k in 1usize..9) {
        let q = top_k_probabilities(&p, k);
        prop_assert!(on_simplex(&q));
        let set = top_k_set(&p, k);
        prop_assert!(set.len() <= k);
        prop_assert!(q.iter().filter(|&&v| v > 0.0).count() <= k);
        for &a in &set {
            for &b in &set {
                prop_assert!((q[a] * p[b] - q[b] * p[a]).abs() < 1e-12);
            }
        }
        // nothing outside the set outranks anything inside it
        let min_in = set.iter().map(|&a| p[a]).fold(f64::INFINITY, f64::min);
        prop_assert!((0..p.len()).filter(|a| !set.contains(a)).all(|a| p[a] <= min_in));
    }

    #[test]
    fn composition_stays_on_simplex(p in simplex(2..=8), ps in 0.0f64..=1.0, prev in 0usize..8) {
        let prev = prev % p.len();
        let out = compose(ps, &p, prev);
        prop_assert!(on_simplex(&out));
        prop_assert_eq!(out[prev], 1.0 - ps);
        let (excluded, _) = exclude_previous(&p, prev);
        prop_assert!(on_simplex(&excluded));
        prop_assert_eq!(excluded[prev], 0.0);
    }

    #[test]
    fn ess_lies_between_one_and_n(w in prop::collection::vec(0.0f64..100.0, 1..50)) {
        prop_assume!(w.iter().any(|&v| v > 0.0));
        let ess = effective_sample_size(&w).unwrap();
        prop_assert!(ess >= 1.0 - 1e-9 && ess <= w.len() as f64 + 1e-9);
    }

    #[test]
    fn wis_is_a_convex_combination(
        items in prop::collection::vec((-30.0f64..5.0, -50.0f64..50.0, 1usize..6), 1..40),
    ) {
        let w: Vec<TrajectoryWeight> = items
            .iter()
            .enumerate()
            .map(|(i, &(lw, ret, stages))| TrajectoryWeight { trajectory_id: i.to_string(), weight: lw.exp(), log_weight: lw, ret, stages })
            .collect();
        let v = estimate(&w, Estimator::Wis, Normalization::Absolute).unwrap().value;
        let lo = items.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let hi = items.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
    }

    #[test]
    fn quartiles_are_ordered(v in prop::collection::vec(-1e6f64..1e6, 1..60)) {
        let s = aggregate_splits(&v).unwrap();
        prop_assert!(s.q1 <= s.median && s.median <= s.q3);
        prop_assert!(s.iqr() >= 0.0);
    }

    #[test]
    fn tree_predictions_are_distributions_and_survive_json(
        rows in prop::collection::vec((prop::collection::vec(0i32..10, 3), 0usize..3), 4..80),
        depth in 1usize..5,
    ) {
        let x: Vec<Vec<f64>> = rows.iter().map(|(r, _)| r.iter().map(|&v| v as f64).collect()).collect();
        let y: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let tree = DecisionTree::fit(&x, &y, 3, &TreeHyperparams { max_depth: depth, min_leaf_fraction: 0.05, seed: 0 }).unwrap();
        prop_assert!(tree.depth() <= depth);
        let back = DecisionTree::from_json(&tree.to_json().unwrap()).unwrap();
        for row in &x {
            let p = tree.predict_proba(row).unwrap();
            prop_assert!(on_simplex(&p));
            prop_assert_eq!(back.predict_proba(row).unwrap(), p);
        }
        let total: u64 = tree.leaves().map(|l| l.n()).sum();
        prop_assert_eq!(total, x.len() as u64);
    }

    #[test]
    fn calibrated_outputs_are_distributions(
        raw in prop::collection::vec(simplex(3..=3), 10..60),
        labels in prop::collection::vec(0usize..3, 60),
        query in simplex(3..=3),
    ) {
        let y = &labels[..raw.len()];
        let cal = Calibrator::fit(&raw, y, 3).unwrap();
        prop_assert!(on_simplex(&cal.apply(&query).unwrap()));
    }

    #[test]
    fn descriptors_round_trip_through_text(
        kind in 0usize..4, k in 1usize..6, p1 in prop::sample::select(vec![0.0, 0.1, 0.25, -0.3]), eps in prop::sample::select(vec![0.0, 0.01]),
    ) {
        let text = match kind {
            0 => format!("mc:k={k},epsilon={eps}"),
            1 => format!("mc_o:k={k}"),
            2 => format!("mc_switch_adj:k={k},p1={p1}"),
            _ => "random".to_string(),
        };
        let d: PolicyDescriptor = text.parse().unwrap();
        let again: PolicyDescriptor = d.to_string().parse().unwrap();
        prop_assert_eq!(&again, &d);
        let json = serde_json::to_string(&d).unwrap();
        prop_assert_eq!(serde_json::from_str::<PolicyDescriptor>(&json).unwrap(), d);
    }
}
