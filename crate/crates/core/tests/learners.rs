use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use cogvox::ensemble::{fit_ensemble, ModelSpec, VoteKind};
use cogvox::eval::{grid_search, macro_metrics, make_folds, rmse};
use cogvox::learners::{
    fit_model, AdaBoostParams, Dataset, DnnParams, FeatureMatrix, ForestParams, GbmParams, Hyperparams, Matrix,
    ParamValue, Prediction, Targets,
};

/// Three Gaussian blobs, unit variance, class means 3 apart along their own axis.
fn blobs(n_per_class: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    let mut classes = Vec::new();
    for c in 0..3 {
        for _ in 0..n_per_class {
            let mut r: Vec<f64> = (0..dim).map(|_| noise.sample(&mut rng)).collect();
            r[c] += 3.0;
            rows.push(r);
            classes.push(c);
        }
    }
    (rows, classes)
}

fn labels(p: Prediction) -> Vec<usize> {
    p.labels().expect("classifier output")
}

fn matrix(rows: &[Vec<f64>], columns: &[String]) -> FeatureMatrix {
    let ids = (0..rows.len()).map(|i| format!("t{i:05}")).collect();
    FeatureMatrix::new(ids, columns.to_vec(), Matrix::from_rows(rows)).unwrap()
}

#[test]
fn forest_fits_blobs() {
    let (rows, y) = blobs(50, 42, 1);
    let d = Dataset::from_rows(&rows, Targets::Classes(y.clone())).unwrap();
    let m = fit_model(&Hyperparams::RandomForest(ForestParams::default()), &d).unwrap();
    let train = macro_metrics(&y, &labels(m.predict(&d.features).unwrap())).unwrap();
    assert!(train.macro_f1 >= 0.99, "training macro F1 {}", train.macro_f1);

    let (held, hy) = blobs(30, 42, 2);
    let test = macro_metrics(&hy, &labels(m.predict(&matrix(&held, &d.features.columns)).unwrap())).unwrap();
    assert!(test.macro_f1 >= 0.8, "held-out macro F1 {}", test.macro_f1);
}

#[test]
fn forest_recovers_separable_training_labels() {
    let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 7) as f64]).collect();
    let y: Vec<usize> = (0..30).map(|i| i / 10).collect();
    let d = Dataset::from_rows(&rows, Targets::Classes(y.clone())).unwrap();
    let m = fit_model(&Hyperparams::RandomForest(ForestParams { n_trees: 25, ..ForestParams::default() }), &d).unwrap();
    assert_eq!(labels(m.predict(&d.features).unwrap()), y);
}

#[test]
fn adaboost_separates_toy_set_within_fifty_stages() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..60 {
        let (a, b): (f64, f64) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
        // three bands cut along the first feature, a margin on both cuts
        if (a - 3.0).abs() < 0.3 || (a - 6.5).abs() < 0.3 {
            continue;
        }
        rows.push(vec![a, b]);
        y.push(usize::from(a > 3.0) + usize::from(a > 6.5));
    }
    let d = Dataset::from_rows(&rows, Targets::Classes(y.clone())).unwrap();
    let hp = AdaBoostParams { n_estimators: 50, ..AdaBoostParams::default() };
    let m = fit_model(&Hyperparams::AdaBoost(hp), &d).unwrap();
    let f1 = macro_metrics(&y, &labels(m.predict(&d.features).unwrap())).unwrap().macro_f1;
    assert_eq!(f1, 1.0);
}

#[test]
fn gbm_recovers_exact_linear_target() {
    // eight distinct x1 values, so depth-3 trees can isolate every level
    let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 8) as f64 * 1.5, ((i * 7) % 11) as f64]).collect();
    let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0]).collect();
    let d = Dataset::from_rows(&rows, Targets::Values(y.clone())).unwrap();
    let hp = GbmParams { n_estimators: 200, learning_rate: 0.1, max_depth: 3, seed: 0 };
    let m = fit_model(&Hyperparams::GradientBoosting(hp), &d).unwrap();
    let Prediction::Values(p) = m.predict(&d.features).unwrap() else { panic!("values expected") };
    let e = rmse(&y, &p).unwrap();
    assert!(e < 1e-6, "training RMSE {e}");
}

#[test]
fn dnn_generalises_on_blobs() {
    // five dimensions: with 42 and only 150 rows the net memorises noise
    let (rows, y) = blobs(50, 5, 4);
    let d = Dataset::from_rows(&rows, Targets::Classes(y)).unwrap();
    let hp = DnnParams { hidden_sizes: vec![64], epochs: 200, ..DnnParams::default() };
    let m = fit_model(&Hyperparams::Dnn(hp), &d).unwrap();
    let (held, hy) = blobs(200, 5, 5);
    let f1 = macro_metrics(&hy, &labels(m.predict(&matrix(&held, &d.features.columns)).unwrap())).unwrap().macro_f1;
    assert!(f1 >= 0.95, "held-out macro F1 {f1}");
}

#[test]
fn soft_vote_is_the_plain_average_of_members() {
    let (rows, y) = blobs(15, 4, 6);
    let d = Dataset::from_rows(&rows, Targets::Classes(y)).unwrap();
    let spec = ModelSpec {
        vote: VoteKind::Soft,
        members: vec![
            Hyperparams::RandomForest(ForestParams { n_trees: 10, ..ForestParams::default() }),
            Hyperparams::AdaBoost(AdaBoostParams { n_estimators: 10, ..AdaBoostParams::default() }),
            Hyperparams::Dnn(DnnParams { epochs: 10, ..DnnParams::default() }),
        ],
        weights: None,
    };
    let ens = fit_ensemble(&spec, &d, 0).unwrap();
    let Prediction::Probabilities(out) = ens.predict(&d.features).unwrap() else { panic!("probabilities expected") };
    let per_member: Vec<Vec<[f64; 3]>> = ens
        .members()
        .iter()
        .map(|m| match m.predict(&d.features).unwrap() {
            Prediction::Probabilities(p) => p,
            other => panic!("unexpected {other:?}"),
        })
        .collect();
    for (i, row) in out.iter().enumerate() {
        for c in 0..3 {
            let mut sum = 0.0;
            for m in &per_member {
                sum += m[i][c];
            }
            assert!((row[c] - sum / 3.0).abs() < 1e-12);
        }
    }
}

#[test]
fn grid_prefers_the_larger_forest() {
    let (rows, y) = blobs(20, 6, 7);
    let d = Dataset::from_rows(&rows, Targets::Classes(y.clone())).unwrap();
    let mut grid = BTreeMap::new();
    grid.insert("n_trees".to_string(), vec![ParamValue::Int(1), ParamValue::Int(300)]);
    let plan = make_folds(&Targets::Classes(y), 5, 0, true).unwrap();
    let base = Hyperparams::RandomForest(ForestParams::default());
    let res = grid_search(&d, &base, &grid, &plan, 0).unwrap();
    assert_eq!(res.best_index, 1, "rows: {:?}", res.rows);
    let Hyperparams::RandomForest(best) = res.best else { panic!("forest expected") };
    assert_eq!(best.n_trees, 300);
}
