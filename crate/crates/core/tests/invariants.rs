use proptest::prelude::*;
use vessel_risk::data::{LabeledMatrix, Matrix};
use vessel_risk::filter::{replay_trace, sliding_filter, CorrelationMatrix, CorrelationScope, FilterConfig};
use vessel_risk::forest::{ForestConfig, RandomForestModel};
use vessel_risk::resample::smote;
use vessel_risk::select::stratified_kfold;
use vessel_risk::shap::{brute_force_shapley, tree_shap, ImportanceRank};

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

/// Symmetric matrix with unit diagonal from an upper triangle.
fn symmetric(n: usize, upper: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    let mut k = 0;
    for i in 0..n {
        v[i * n + i] = 1.0;
        for j in i + 1..n {
            v[i * n + j] = upper[k];
            v[j * n + i] = upper[k];
            k += 1;
        }
    }
    v
}

fn filter_case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, f64, usize)> {
    (2usize..24).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(-1.0f64..1.0, n * (n - 1) / 2),
            prop::collection::vec(0.0f64..1.0, n),
            0.05f64..1.0,
            2usize..30,
        )
    })
}

fn labeled(rows: &[Vec<f64>], y: Vec<usize>, n_classes: usize) -> LabeledMatrix {
    let cols = rows[0].len();
    LabeledMatrix::new(Matrix::from_rows(rows, cols), y, n_classes, ids(cols))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_keeps_an_ordered_subsequence((n, upper, imp, tau, window) in filter_case()) {
        let names = ids(n);
        let corr = CorrelationMatrix::from_values(names.clone(), CorrelationScope::Global, symmetric(n, &upper));
        let rank = ImportanceRank::from_importances(&names, &imp);
        let config = FilterConfig { r_tau: tau, window, scope: CorrelationScope::Global, use_absolute: true };
        let out = sliding_filter(&rank, &corr, &config).unwrap();

        let input = rank.ids();
        let kept = out.rank.ids();
        let mut it = input.iter();
        prop_assert!(kept.iter().all(|k| it.any(|x| x == k)));
        prop_assert_eq!(kept.first(), input.first());

        let states = replay_trace(&input, &out.trace).unwrap();
        prop_assert_eq!(states.last().unwrap_or(&input), &kept);

        // a round removes exactly the window followers above tau
        let mut before = &input;
        for (round, after) in out.trace.iter().zip(&states) {
            let a = round.anchor_position;
            prop_assert_eq!(&before[a], &round.anchor);
            for b in before.iter().skip(a + 1).take(window - 1) {
                let strong = corr.by_id(&round.anchor, b).unwrap().abs() > tau;
                prop_assert_eq!(strong, round.removed.iter().any(|r| &r.id == b));
            }
            before = after;
        }
    }

    #[test]
    fn tau_one_removes_nothing((n, upper, imp, _tau, window) in filter_case()) {
        let names = ids(n);
        let corr = CorrelationMatrix::from_values(names.clone(), CorrelationScope::Global, symmetric(n, &upper));
        let rank = ImportanceRank::from_importances(&names, &imp);
        let config = FilterConfig { r_tau: 1.0, window, scope: CorrelationScope::Global, use_absolute: true };
        let out = sliding_filter(&rank, &corr, &config).unwrap();
        prop_assert_eq!(out.rank, rank);
    }

    #[test]
    fn folds_balance_every_class(counts in prop::collection::vec(5usize..40, 2..4), k in 2usize..6, seed in any::<u64>()) {
        let y: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &m)| std::iter::repeat_n(c, m)).collect();
        let folds = stratified_kfold(&y, counts.len(), k, seed).unwrap();
        prop_assert_eq!(folds.len(), y.len());
        for (c, &m) in counts.iter().enumerate() {
            let mut per_fold = vec![0usize; k];
            for (i, &f) in folds.iter().enumerate() {
                if y[i] == c {
                    per_fold[f] += 1;
                }
            }
            let lo = *per_fold.iter().min().unwrap();
            let hi = *per_fold.iter().max().unwrap();
            prop_assert!(hi - lo <= 1, "class {} of size {} split {:?}", c, m, per_fold);
        }
    }

    #[test]
    fn smote_points_lie_between_parents(
        rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 6..20),
        n_synthetic in 1usize..30,
        seed in any::<u64>(),
    ) {
        let y = vec![0; rows.len()];
        let data = labeled(&rows, y, 1);
        let synth = smote(&data, 0, n_synthetic, 5, seed).unwrap();
        prop_assert_eq!(synth.len(), n_synthetic);
        for s in &synth {
            let (a, b) = s.parents;
            prop_assert_ne!(a, b);
            // common gap along every coordinate
            let mut gap: Option<f64> = None;
            for c in 0..3 {
                let (pa, pb, v) = (rows[a][c], rows[b][c], s.values[c]);
                let (lo, hi) = (pa.min(pb), pa.max(pb));
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                if (pb - pa).abs() > 1e-6 {
                    let t = (v - pa) / (pb - pa);
                    if let Some(g) = gap {
                        prop_assert!((g - t).abs() < 1e-6);
                    }
                    gap = Some(t);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tree_shap_matches_exact_shapley(
        rows in prop::collection::vec(prop::collection::vec(0u8..4, 5), 30..60),
        seed in any::<u64>(),
        probe in prop::collection::vec(0u8..4, 5),
    ) {
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let y: Vec<usize> = rows.iter().map(|r| ((r[0] + r[1] * r[2]) % 3) as usize).collect();
        prop_assume!((0..3).all(|c| y.contains(&c)));
        let data = labeled(&x, y, 3);
        let config = ForestConfig { n_trees: 4, max_depth: Some(5), min_samples_leaf: 1, mtry: None, bootstrap: true, seed };
        let model = RandomForestModel::fit(&data, &config).unwrap();
        let probe: Vec<f64> = probe.iter().map(|&v| v as f64).collect();

        let fast = tree_shap(&model, &probe).unwrap();
        let exact = brute_force_shapley(&model, &probe).unwrap();
        for (a, b) in fast.phi.iter().zip(&exact.phi) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let proba = model.predict_proba(&probe).unwrap();
        for (r, p) in fast.reconstruct().iter().zip(&proba) {
            prop_assert!((r - p).abs() < 1e-9);
        }
    }
}
