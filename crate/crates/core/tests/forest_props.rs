use barnmap::forest::{fit_forest, model_from_str, model_to_string, Dataset, HyperParams, MaxFeatures};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(seed: u64, n: usize, classes: usize) -> Dataset {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<usize> = rows
        .iter()
        .map(|x| if r.gen_bool(0.1) { r.gen_range(0..classes) } else { ((x[0] + 1.0) / 2.0 * classes as f64) as usize % classes })
        .collect();
    let cols = (0..4).map(|i| format!("f{i}")).collect();
    let names = (0..classes).map(|i| format!("c{i}")).collect();
    Dataset::classification(cols, &rows, labels, names).unwrap()
}

fn params() -> impl Strategy<Value = HyperParams> {
    (1usize..12, prop::option::of(1usize..6), 2usize..6, 1usize..4, prop_oneof![Just(MaxFeatures::Sqrt), Just(MaxFeatures::Log2), Just(MaxFeatures::All)])
        .prop_map(|(n_trees, max_depth, min_split, min_leaf, max_features)| HyperParams {
            n_trees,
            max_depth,
            min_split,
            min_leaf,
            max_features,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn probabilities_and_importance_are_normalized(seed in 0u64..1000, classes in 2usize..5, p in params()) {
        let d = data(seed, 150, classes);
        let m = fit_forest(&d, &p, seed).unwrap();
        for i in 0..d.n_rows() {
            let pr = m.predict_proba(d.row(i)).unwrap();
            prop_assert_eq!(pr.len(), classes);
            prop_assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(pr.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let imp = m.gini_importance();
        let total: f64 = imp.iter().sum();
        prop_assert!(imp.iter().all(|&v| v >= 0.0));
        prop_assert!(total == 0.0 || (total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn depth_limit_holds(seed in 0u64..1000, p in params()) {
        let m = fit_forest(&data(seed, 120, 3), &p, seed).unwrap();
        prop_assert_eq!(m.trees.len(), p.n_trees);
        if let Some(limit) = p.max_depth {
            prop_assert!(m.trees.iter().all(|t| t.depth() <= limit));
        }
    }

    #[test]
    fn serialized_model_predicts_identically(seed in 0u64..1000, p in params()) {
        let d = data(seed, 100, 2);
        let m = fit_forest(&d, &p, seed).unwrap();
        let back = model_from_str(&model_to_string(&m).unwrap()).unwrap();
        prop_assert_eq!(&back, &m);
        for i in 0..d.n_rows() {
            prop_assert_eq!(back.predict_proba(d.row(i)).unwrap(), m.predict_proba(d.row(i)).unwrap());
        }
    }

    #[test]
    fn regression_stays_within_target_range(seed in 0u64..1000, p in params()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..120).map(|_| vec![r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)]).collect();
        let y: Vec<f64> = rows.iter().map(|x| 100.0 * x[0] + r.gen_range(-5.0..5.0)).collect();
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let d = Dataset::regression(vec!["a".into(), "b".into()], &rows, y).unwrap();
        let m = fit_forest(&d, &p, seed).unwrap();
        for x in &rows {
            let v = m.predict_value(x).unwrap();
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }
}
