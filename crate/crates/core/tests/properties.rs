use proptest::prelude::*;

use cogvox::embedding::{pool, EmbeddingMatrix, PoolingMethod};
use cogvox::ensemble::{vote_hard, vote_regress, vote_soft};
use cogvox::eval::{macro_metrics, macro_metrics_exact, make_folds, rmse};
use cogvox::features::{compute_features, LinguisticCounts};
use cogvox::learners::{
    argmax, fit_model, Dataset, FeatureMatrix, ForestParams, GbmParams, GradientBoosting, Hyperparams, Matrix,
    Prediction, Targets,
};
use cogvox::transcript::{parse_transcript, write_transcript, Task};

fn prob_row() -> impl Strategy<Value = [f64; 3]> {
    (0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0).prop_map(|(a, b, c)| {
        let s = a + b + c;
        [a / s, b / s, c / s]
    })
}

fn members(n_members: usize, n_rows: usize) -> impl Strategy<Value = Vec<Vec<[f64; 3]>>> {
    prop::collection::vec(prop::collection::vec(prob_row(), n_rows), n_members)
}

fn labels() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..40).prop_flat_map(|n| (prop::collection::vec(0usize..3, n), prop::collection::vec(0usize..3, n)))
}

proptest! {
    #[test]
    fn macro_metrics_ignore_sample_order((t, p) in labels(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..t.len()).collect();
        let mut s = seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let t2: Vec<usize> = idx.iter().map(|&i| t[i]).collect();
        let p2: Vec<usize> = idx.iter().map(|&i| p[i]).collect();
        prop_assert_eq!(macro_metrics_exact(&t, &p).unwrap(), macro_metrics_exact(&t2, &p2).unwrap());
    }

    #[test]
    fn macro_metrics_ignore_class_names((t, p) in labels(), perm in Just([0usize, 1, 2]).prop_shuffle()) {
        let t2: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
        let p2: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
        prop_assert_eq!(macro_metrics_exact(&t, &p).unwrap(), macro_metrics_exact(&t2, &p2).unwrap());
    }

    #[test]
    fn macro_metrics_lie_in_unit_interval((t, p) in labels()) {
        let m = macro_metrics(&t, &p).unwrap();
        for v in [m.macro_precision, m.macro_recall, m.macro_f1, m.macro_f1_per_class_avg] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // absent classes contribute zero, so perfection needs all three present
        if (0..3).all(|c| t.contains(&c)) {
            let perfect = macro_metrics(&t, &t).unwrap();
            prop_assert!(perfect.macro_f1 == 1.0);
        }
    }

    #[test]
    fn rmse_is_symmetric_and_shift_invariant(
        pairs in prop::collection::vec((0.0f64..30.0, 0.0f64..30.0), 1..50),
        shift in -10.0f64..10.0,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = rmse(&a, &b).unwrap();
        prop_assert_eq!(r, rmse(&b, &a).unwrap());
        let a2: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let b2: Vec<f64> = b.iter().map(|v| v + shift).collect();
        prop_assert!((rmse(&a2, &b2).unwrap() - r).abs() < 1e-9);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn folds_partition_rows(classes in prop::collection::vec(0usize..3, 5..80), k in 2usize..6, seed in any::<u64>()) {
        let plan = make_folds(&Targets::Classes(classes.clone()), k, seed, true).unwrap();
        let mut all: Vec<usize> = plan.folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..classes.len()).collect::<Vec<_>>());
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for c in 0..3 {
            let per: Vec<usize> = plan.folds.iter().map(|f| f.iter().filter(|&&i| classes[i] == c).count()).collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        for f in 0..k {
            let train = plan.train_indices(f);
            prop_assert!(train.iter().all(|i| !plan.folds[f].contains(i)));
            prop_assert_eq!(train.len() + plan.folds[f].len(), classes.len());
        }
    }

    #[test]
    fn regression_folds_partition_rows(values in prop::collection::vec(0.0f64..30.0, 5..60), seed in any::<u64>()) {
        let plan = make_folds(&Targets::Values(values.clone()), 5, seed, true).unwrap();
        let mut all: Vec<usize> = plan.folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..values.len()).collect::<Vec<_>>());
    }

    #[test]
    fn soft_vote_of_identical_members_is_idempotent(m in members(1, 6), copies in 1usize..5) {
        let all = vec![m[0].clone(); copies];
        let out = vote_soft(&all, &vec![1.0; copies]);
        for (o, r) in out.iter().zip(&m[0]) {
            for c in 0..3 {
                prop_assert!((o[c] - r[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn soft_vote_rows_sum_to_one(m in members(3, 8), w in prop::collection::vec(0.1f64..5.0, 3)) {
        for row in vote_soft(&m, &w) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn hard_vote_ignores_weight_scale(m in members(3, 8), w in prop::collection::vec(0.1f64..5.0, 3), scale in 0.01f64..100.0) {
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        prop_assert_eq!(vote_hard(&m, &w), vote_hard(&m, &scaled));
    }

    #[test]
    fn unanimous_members_decide_both_votes(m in members(4, 6)) {
        let first: Vec<usize> = m[0].iter().map(|r| argmax(r)).collect();
        let hard = vote_hard(&m, &[1.0; 4]);
        let soft = vote_soft(&m, &[1.0; 4]);
        for (i, c) in first.iter().enumerate() {
            if m.iter().all(|mm| argmax(&mm[i]) == *c) {
                prop_assert_eq!(hard[i], *c);
                prop_assert_eq!(argmax(&soft[i]), *c);
            }
        }
    }

    #[test]
    fn regressor_vote_stays_between_members(
        m in prop::collection::vec(prop::collection::vec(0.0f64..30.0, 6), 1..5),
        w in prop::collection::vec(0.1f64..5.0, 5),
    ) {
        let out = vote_regress(&m, &w[..m.len()]);
        for (i, v) in out.iter().enumerate() {
            let lo = m.iter().map(|r| r[i]).fold(f64::INFINITY, f64::min);
            let hi = m.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*v >= lo - 1e-9 && *v <= hi + 1e-9);
        }
    }

    #[test]
    fn features_are_finite_and_bounded(
        counts in prop::array::uniform12(0u64..50),
        duration in 0.1f64..600.0,
    ) {
        let c = LinguisticCounts {
            pronoun_count: counts[0],
            definite_np_count: counts[1],
            indefinite_np_count: counts[2],
            filler_word_count: counts[3].min(counts[4]),
            total_word_count: counts[4],
            actual_word_count: counts[4] - counts[3].min(counts[4]),
            adverbial_adjunct_count: counts[6],
            total_sentence_count_punct: counts[7].min(counts[8]),
            total_sentence_count_sentstruct: counts[8],
            total_clause_count_minimal: counts[9].min(counts[10]),
            total_clause_count_comprehensive: counts[10],
            adjunct_clause_count: counts[11].min(counts[10]),
        };
        let v = compute_features(Task::Ctd, &c, duration).unwrap();
        prop_assert!(v.values().iter().all(|x| x.is_finite() && *x >= 0.0));
        for i in [1, 2, 3, 7, 13] {
            prop_assert!(v.values()[i] <= 1.0);
        }
    }

    #[test]
    fn mean_pooling_lies_within_column_range(frames in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 1..10)) {
        let m = EmbeddingMatrix::new("p", Task::Ctd, frames.clone(), 4).unwrap();
        let pooled = pool(&m, PoolingMethod::Mean);
        for j in 0..4 {
            let lo = frames.iter().map(|f| f[j]).fold(f64::INFINITY, f64::min);
            let hi = frames.iter().map(|f| f[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(pooled.values[j] >= lo && pooled.values[j] <= hi);
        }
    }

    #[test]
    fn chain_transcripts_round_trip(words in prop::collection::vec("[a-z]{1,8}", 1..12)) {
        // every token hangs off its predecessor; the first is the root
        let text: String = words
            .iter()
            .enumerate()
            .map(|(i, w)| format!("{}\t{w}\t{w}\tNOUN\t{}\t{}\n", i + 1, i, if i == 0 { "root" } else { "dep" }))
            .collect();
        let t = parse_transcript(text.as_bytes(), "p", Task::Sf, 5.0).unwrap();
        let mut buf = Vec::new();
        write_transcript(&t, &mut buf).unwrap();
        prop_assert_eq!(parse_transcript(&buf[..], "p", Task::Sf, 5.0).unwrap(), t);
    }
}

fn toy_regression(n: usize, seed: u64) -> Dataset {
    let mut s = seed;
    let mut next = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![next() * 4.0, next() * 4.0]).collect();
    let y = rows.iter().map(|r| (5.0 + 3.0 * r[0] - r[1] + next()).clamp(0.0, 30.0)).collect();
    Dataset::from_rows(&rows, Targets::Values(y)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gbm_training_error_never_increases(seed in any::<u64>(), n in 5usize..40) {
        let d = toy_regression(n, seed);
        let hp = GbmParams { n_estimators: 30, ..GbmParams::default() };
        let g = GradientBoosting::fit(&d, &hp).unwrap();
        let y = d.values().unwrap();
        let mut last = f64::INFINITY;
        for stages in 0..=30 {
            let e = rmse(y, &g.predict_staged(&d.features.x, stages)).unwrap();
            prop_assert!(e <= last + 1e-12);
            last = e;
        }
    }

    #[test]
    fn regression_predictions_are_clamped(seed in any::<u64>()) {
        let d = toy_regression(20, seed);
        let m = fit_model(&Hyperparams::GradientBoosting(GbmParams::default()), &d).unwrap();
        let far = Matrix::from_rows(&[vec![-1e6, 1e6], vec![1e6, -1e6]]);
        let x = FeatureMatrix::new(vec!["a".into(), "b".into()], d.features.columns.clone(), far).unwrap();
        let Prediction::Values(p) = m.predict(&x).unwrap() else { panic!("values expected") };
        prop_assert!(p.iter().all(|v| (0.0..=30.0).contains(v)));
    }

    #[test]
    fn forest_ignores_row_order(seed in any::<u64>(), rot in 1usize..19) {
        let d = toy_regression(20, seed);
        let rows: Vec<usize> = (0..20).map(|i| (i + rot) % 20).collect();
        let shuffled = d.subset(&rows);
        let hp = Hyperparams::RandomForest(ForestParams { n_trees: 10, seed, ..ForestParams::default() });
        let a = fit_model(&hp, &d).unwrap();
        let b = fit_model(&hp, &shuffled).unwrap();
        prop_assert_eq!(a.predict(&d.features).unwrap(), b.predict(&d.features).unwrap());
    }
}
