//! Challenge metrics, stratified fold plans, cross-validation and grid search.

use std::collections::BTreeMap;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{fit_ensemble, EnsembleError, ModelSpec, VoteKind};
use crate::learners::{Dataset, Hyperparams, ParamValue, Prediction, Targets, TaskKind, N_CLASSES};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("class label {0} out of range")]
    LabelOutOfRange(usize),
    #[error("{n} samples cannot fill {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("fold count must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("grid is empty")]
    EmptyGrid,
    #[error("every grid cell failed; first error: {0}")]
    AllCellsFailed(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

type Q = Ratio<i128>;

fn q_to_f64(q: Q) -> f64 {
    q.to_f64().expect("finite ratio")
}

/// Macro precision/recall over the three classes, macro F1 as their harmonic
/// mean, and the per-class F1 average for comparison only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    /// Rows are true classes, columns predicted classes.
    pub confusion: [[u64; N_CLASSES]; N_CLASSES],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_f1_per_class_avg: f64,
    /// Some per-class precision or recall had a zero denominator and was set to 0.
    pub zero_division: bool,
}

/// Exact rational values behind [`ClassificationMetrics`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactMacro {
    pub precision: Q,
    pub recall: Q,
    pub f1: Q,
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize]) -> Result<[[u64; N_CLASSES]; N_CLASSES], EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch { left: y_true.len(), right: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut m = [[0u64; N_CLASSES]; N_CLASSES];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= N_CLASSES || p >= N_CLASSES {
            return Err(EvalError::LabelOutOfRange(t.max(p)));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

fn exact_from_confusion(m: &[[u64; N_CLASSES]; N_CLASSES]) -> (ExactMacro, Q, bool) {
    let k = Q::from_integer(N_CLASSES as i128);
    let mut zero_division = false;
    let mut frac = |num: u64, den: u64| {
        if den == 0 {
            zero_division = true;
            Q::zero()
        } else {
            Q::new(num as i128, den as i128)
        }
    };
    let mut p = Q::zero();
    let mut r = Q::zero();
    let mut f1_sum = Q::zero();
    for (c, row) in m.iter().enumerate() {
        let tp = row[c];
        let predicted: u64 = m.iter().map(|r| r[c]).sum();
        let actual: u64 = row.iter().sum();
        let pc = frac(tp, predicted);
        let rc = frac(tp, actual);
        p += pc;
        r += rc;
        if !(pc + rc).is_zero() {
            f1_sum += Q::from_integer(2) * pc * rc / (pc + rc);
        }
    }
    let p = p / k;
    let r = r / k;
    let f1 = if (p + r).is_zero() { Q::zero() } else { Q::from_integer(2) * p * r / (p + r) };
    (ExactMacro { precision: p, recall: r, f1 }, f1_sum / k, zero_division)
}

pub fn macro_metrics_exact(y_true: &[usize], y_pred: &[usize]) -> Result<ExactMacro, EvalError> {
    Ok(exact_from_confusion(&confusion_matrix(y_true, y_pred)?).0)
}

pub fn macro_metrics(y_true: &[usize], y_pred: &[usize]) -> Result<ClassificationMetrics, EvalError> {
    Ok(metrics_from_confusion(confusion_matrix(y_true, y_pred)?))
}

pub fn metrics_from_confusion(confusion: [[u64; N_CLASSES]; N_CLASSES]) -> ClassificationMetrics {
    let (e, per_class, zero_division) = exact_from_confusion(&confusion);
    ClassificationMetrics {
        confusion,
        macro_precision: q_to_f64(e.precision),
        macro_recall: q_to_f64(e.recall),
        macro_f1: q_to_f64(e.f1),
        macro_f1_per_class_avg: q_to_f64(per_class),
        zero_division,
    }
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch { left: y_true.len(), right: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let sse: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok((sse / y_true.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metrics {
    Classification(ClassificationMetrics),
    Regression { rmse: f64 },
}

impl Metrics {
    /// Selection score: macro F1 (higher is better) or RMSE (lower is better).
    pub fn score(&self) -> f64 {
        match self {
            Metrics::Classification(m) => m.macro_f1,
            Metrics::Regression { rmse } => *rmse,
        }
    }

    pub fn compute(targets: &Targets, pred: &Prediction) -> Result<Metrics, EvalError> {
        match targets {
            Targets::Classes(y) => {
                let labels = pred.labels().ok_or(EvalError::LengthMismatch { left: y.len(), right: 0 })?;
                Ok(Metrics::Classification(macro_metrics(y, &labels)?))
            }
            Targets::Values(y) => match pred {
                Prediction::Values(p) => Ok(Metrics::Regression { rmse: rmse(y, p)? }),
                _ => Err(EvalError::LengthMismatch { left: y.len(), right: 0 }),
            },
        }
    }
}

fn better(task: TaskKind, a: f64, b: f64) -> bool {
    match task {
        TaskKind::Classification => a > b,
        TaskKind::Regression => a < b,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    /// Stratum of each row: the class, or the quantile bin for regression.
    pub strata: Vec<usize>,
    /// Sorted row indices of each fold.
    pub folds: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.strata.len()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> =
            (0..self.k).filter(|&f| f != fold).flat_map(|f| self.folds[f].iter().copied()).collect();
        idx.sort_unstable();
        idx
    }
}

pub const REGRESSION_BINS: usize = 4;

fn quantile_bins(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut bins = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        bins[i] = rank * REGRESSION_BINS / n;
    }
    bins
}

/// Shuffles each stratum and deals its rows round-robin, continuing the deal
/// position across strata so fold sizes also differ by at most one.
pub fn make_folds(targets: &Targets, k: usize, seed: u64, stratify: bool) -> Result<FoldPlan, EvalError> {
    let n = targets.len();
    if k < 2 {
        return Err(EvalError::InvalidK(k));
    }
    if n < k {
        return Err(EvalError::TooFewSamples { n, k });
    }
    let strata = match (stratify, targets) {
        (false, _) => vec![0; n],
        (true, Targets::Classes(c)) => c.clone(),
        (true, Targets::Values(v)) => quantile_bins(v),
    };
    let n_strata = strata.iter().max().map_or(0, |m| m + 1);
    let mut warnings = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0;
    for s in 0..n_strata {
        let mut members: Vec<usize> = (0..n).filter(|&i| strata[i] == s).collect();
        if stratify && !members.is_empty() && members.len() < k {
            warnings.push(format!("stratum {s} has {} rows, fewer than {k} folds", members.len()));
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[pos % k].push(i);
            pos += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldPlan { k, seed, stratified: stratify, strata, folds, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub folds: Vec<FoldResult>,
    /// Mean of the per-fold selection scores.
    pub mean_score: f64,
    /// Out-of-fold prediction for every row, in dataset order.
    pub oof: Prediction,
}

/// Fits `spec` on each fold's complement and scores it on the fold.
pub fn cross_validate(d: &Dataset, spec: &ModelSpec, plan: &FoldPlan, seed: u64) -> Result<CvOutcome, EvalError> {
    if plan.n() != d.len() {
        return Err(EvalError::LengthMismatch { left: plan.n(), right: d.len() });
    }
    let per_fold = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let train = d.subset(&plan.train_indices(f));
            let test = d.subset(&plan.folds[f]);
            let model = fit_ensemble(spec, &train, seed)?;
            let pred = model.predict(&test.features)?;
            let metrics = Metrics::compute(&test.targets, &pred)?;
            Ok((FoldResult { fold: f, n_train: train.len(), n_test: test.len(), metrics }, pred))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let n = d.len();
    let mut oof = match d.kind() {
        TaskKind::Classification if spec.vote == VoteKind::Hard => Prediction::Labels(vec![0; n]),
        TaskKind::Classification => Prediction::Probabilities(vec![[0.0; N_CLASSES]; n]),
        TaskKind::Regression => Prediction::Values(vec![0.0; n]),
    };
    let mut folds = Vec::with_capacity(plan.k);
    for (f, (res, pred)) in per_fold.into_iter().enumerate() {
        for (j, &i) in plan.folds[f].iter().enumerate() {
            match (&mut oof, &pred) {
                (Prediction::Labels(o), Prediction::Labels(p)) => o[i] = p[j],
                (Prediction::Probabilities(o), Prediction::Probabilities(p)) => o[i] = p[j],
                (Prediction::Values(o), Prediction::Values(p)) => o[i] = p[j],
                _ => unreachable!("ensemble output matches its vote kind"),
            }
        }
        folds.push(res);
    }
    let mean_score = folds.iter().map(|r| r.metrics.score()).sum::<f64>() / folds.len() as f64;
    Ok(CvOutcome { folds, mean_score, oof })
}

pub type Grid = BTreeMap<String, Vec<ParamValue>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub point: Vec<(String, ParamValue)>,
    pub fold_scores: Vec<f64>,
    pub mean: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: Hyperparams,
    pub best_index: usize,
    pub best_score: f64,
    pub rows: Vec<GridRow>,
}

/// Cartesian product in sorted key order; the first key varies slowest and
/// values keep their given order.
pub fn grid_points(grid: &Grid) -> Vec<Vec<(String, ParamValue)>> {
    if grid.is_empty() {
        return Vec::new();
    }
    let mut points = vec![Vec::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p: Vec<(String, ParamValue)>| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

fn single_member(d: &Dataset, hp: Hyperparams) -> ModelSpec {
    let vote = match d.kind() {
        TaskKind::Classification => VoteKind::Soft,
        TaskKind::Regression => VoteKind::RegressorMean,
    };
    ModelSpec { vote, members: vec![hp], weights: None }
}

/// Scores every grid point by mean CV objective. Failed cells are kept in the
/// table with their error; ties go to the earlier point.
pub fn grid_search(
    d: &Dataset,
    base: &Hyperparams,
    grid: &Grid,
    plan: &FoldPlan,
    seed: u64,
) -> Result<GridResult, EvalError> {
    let points = grid_points(grid);
    if points.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let evaluated: Vec<(GridRow, Option<Hyperparams>)> = points
        .into_par_iter()
        .map(|point| {
            let mut hp = base.clone();
            let outcome =
                point.iter().try_for_each(|(k, v)| hp.set(k, v)).map_err(|e| e.to_string()).and_then(|()| {
                    cross_validate(d, &single_member(d, hp.clone()), plan, seed).map_err(|e| e.to_string())
                });
            match outcome {
                Ok(cv) => (
                    GridRow {
                        point,
                        fold_scores: cv.folds.iter().map(|f| f.metrics.score()).collect(),
                        mean: Some(cv.mean_score),
                        error: None,
                    },
                    Some(hp),
                ),
                Err(e) => (GridRow { point, fold_scores: Vec::new(), mean: None, error: Some(e) }, None),
            }
        })
        .collect();

    let task = d.kind();
    let mut best: Option<(usize, f64, Hyperparams)> = None;
    for (i, (row, hp)) in evaluated.iter().enumerate() {
        if let (Some(m), Some(hp)) = (row.mean, hp) {
            if best.as_ref().is_none_or(|(_, b, _)| better(task, m, *b)) {
                best = Some((i, m, hp.clone()));
            }
        }
    }
    let rows: Vec<GridRow> = evaluated.into_iter().map(|(r, _)| r).collect();
    match best {
        Some((best_index, best_score, best)) => Ok(GridResult { best, best_index, best_score, rows }),
        None => Err(EvalError::AllCellsFailed(rows[0].error.clone().unwrap_or_default())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        // HC HC MCI AD vs HC MCI MCI AD
        let m = macro_metrics(&[0, 0, 1, 2], &[0, 1, 1, 2]).unwrap();
        assert_eq!(m.macro_precision, 5.0 / 6.0);
        assert_eq!(m.macro_recall, 5.0 / 6.0);
        assert_eq!(m.macro_f1, 5.0 / 6.0);
        assert_eq!(m.confusion, [[1, 1, 0], [0, 1, 0], [0, 0, 1]]);
        assert!(!m.zero_division);
    }

    #[test]
    fn perfect_and_absent_classes() {
        let m = macro_metrics(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!((m.macro_precision, m.macro_recall, m.macro_f1), (1.0, 1.0, 1.0));
        // AD absent from both sides contributes zero to the averages
        let m = macro_metrics(&[0, 1], &[0, 1]).unwrap();
        assert_eq!(m.macro_precision, 2.0 / 3.0);
        assert!(m.zero_division);
        assert_eq!(macro_metrics(&[], &[]), Err(EvalError::EmptyInput));
        assert_eq!(macro_metrics(&[0], &[0, 1]), Err(EvalError::LengthMismatch { left: 1, right: 2 }));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[27.0, 25.0], &[28.0, 26.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[], &[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn challenge_sized_cohort_folds() {
        let mut y = vec![0; 61];
        y.extend(vec![1; 44]);
        y.extend(vec![2; 12]);
        let plan = make_folds(&Targets::Classes(y.clone()), 5, 3, true).unwrap();
        for c in 0..3 {
            let counts: Vec<usize> = plan.folds.iter().map(|f| f.iter().filter(|&&i| y[i] == c).count()).collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "class {c}: {counts:?}");
        }
        assert_eq!(plan, make_folds(&Targets::Classes(y), 5, 3, true).unwrap());
    }

    #[test]
    fn singleton_folds() {
        let plan = make_folds(&Targets::Values(vec![20.0, 21.0, 22.0, 23.0, 24.0]), 5, 0, true).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 1));
        assert_eq!(
            make_folds(&Targets::Classes(vec![0; 4]), 5, 0, true).unwrap_err(),
            EvalError::TooFewSamples { n: 4, k: 5 }
        );
    }

    #[test]
    fn grid_order() {
        let mut g = Grid::new();
        g.insert("b".into(), vec![ParamValue::Int(1), ParamValue::Int(2)]);
        g.insert("a".into(), vec![ParamValue::Int(3), ParamValue::Int(4)]);
        let pts = grid_points(&g);
        let flat: Vec<String> = pts.iter().map(|p| p.iter().map(|(k, v)| format!("{k}{v}")).collect()).collect();
        assert_eq!(flat, vec!["a3b1", "a3b2", "a4b1", "a4b2"]);
    }
}
