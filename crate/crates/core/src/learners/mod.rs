//! Base learners: CART trees, random forest, AdaBoost (SAMME and R2),
//! least-squares gradient boosting and a ReLU/softmax network.

mod adaboost;
mod dnn;
mod forest;
mod gbm;
mod model;
pub mod tree;

pub use adaboost::{AdaBoostClassifier, AdaBoostParams, AdaBoostRegressor};
pub use dnn::{DnnParams, Mlp};
pub use forest::{ForestParams, RandomForest};
pub use gbm::{GbmParams, GradientBoosting};
pub use model::{
    fit_model, load_model, save_model, FittedState, Hyperparams, ModelKind, ModelMeta, ParamValue, Prediction,
    TrainedModel, MODEL_FORMAT_VERSION, MODEL_MAGIC,
};
pub(crate) use model::{seal, unseal};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const N_CLASSES: usize = 3;
pub const MMSE_MIN: f64 = 0.0;
pub const MMSE_MAX: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("dataset is degenerate: {0}")]
    DegenerateDataset(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("training diverged: {0}")]
    DivergedTraining(String),
    #[error("invalid hyperparameter {name}: {reason}")]
    InvalidHyperparameter { name: String, reason: String },
    #[error("model expects a {expected} dataset")]
    WrongTask { expected: TaskKind },
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("model file checksum does not match (truncated or corrupted)")]
    ChecksumFailure,
    #[error("not a model file")]
    BadMagic,
    #[error("model payload is corrupt: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Classification => "classification",
            TaskKind::Regression => "regression",
        })
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix has no meaningful rows
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Feature rows with their column schema and row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub x: Matrix,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, columns: Vec<String>, x: Matrix) -> Result<Self, LearnerError> {
        if ids.len() != x.rows() {
            return Err(LearnerError::InvalidDataset(format!("{} ids for {} rows", ids.len(), x.rows())));
        }
        if columns.len() != x.cols() {
            return Err(LearnerError::InvalidDataset(format!("{} names for {} columns", columns.len(), x.cols())));
        }
        if let Some(p) = x.as_slice().iter().position(|v| !v.is_finite()) {
            let (r, c) = (p / x.cols(), p % x.cols());
            return Err(LearnerError::InvalidDataset(format!("non-finite feature at row {r}, column {c}")));
        }
        Ok(FeatureMatrix { ids, columns, x })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            columns: self.columns.clone(),
            x: self.x.select_rows(idx),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    /// Class indices 0 (HC), 1 (MCI), 2 (AD).
    Classes(Vec<usize>),
    /// MMSE values.
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Targets::Classes(_) => TaskKind::Classification,
            Targets::Values(_) => TaskKind::Regression,
        }
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(features: FeatureMatrix, targets: Targets) -> Result<Self, LearnerError> {
        if features.is_empty() {
            return Err(LearnerError::DegenerateDataset("no rows".into()));
        }
        if targets.len() != features.len() {
            return Err(LearnerError::InvalidDataset(format!("{} targets for {} rows", targets.len(), features.len())));
        }
        match &targets {
            Targets::Classes(c) => {
                if let Some(bad) = c.iter().find(|&&k| k >= N_CLASSES) {
                    return Err(LearnerError::InvalidDataset(format!("class label {bad} out of range")));
                }
            }
            Targets::Values(v) => {
                if let Some(bad) = v.iter().find(|t| !(MMSE_MIN..=MMSE_MAX).contains(*t)) {
                    return Err(LearnerError::InvalidDataset(format!("regression target {bad} outside [0, 30]")));
                }
            }
        }
        Ok(Dataset { features, targets })
    }

    /// Convenience constructor with generated ids and column names.
    pub fn from_rows(rows: &[Vec<f64>], targets: Targets) -> Result<Self, LearnerError> {
        let x = Matrix::from_rows(rows);
        let ids = (0..x.rows()).map(|i| format!("r{i:06}")).collect();
        let columns = (0..x.cols()).map(|j| format!("f{j}")).collect();
        Dataset::new(FeatureMatrix::new(ids, columns, x)?, targets)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.x.cols()
    }

    pub fn kind(&self) -> TaskKind {
        self.targets.kind()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { features: self.features.select(idx), targets: self.targets.select(idx) }
    }

    /// Rows sorted by id, so that fits do not depend on input row order.
    pub fn canonical(&self) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.features.ids[a].cmp(&self.features.ids[b]).then(a.cmp(&b)));
        self.subset(&idx)
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(c) => Some(c),
            Targets::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.targets {
            Targets::Values(v) => Some(v),
            Targets::Classes(_) => None,
        }
    }

    /// Hex digest over ids, column names, features and targets.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for id in &self.features.ids {
            h.update(id.as_bytes());
            h.update([0u8]);
        }
        for c in &self.features.columns {
            h.update(c.as_bytes());
            h.update([0u8]);
        }
        for v in self.features.x.as_slice() {
            h.update(v.to_le_bytes());
        }
        match &self.targets {
            Targets::Classes(c) => c.iter().for_each(|k| h.update((*k as u64).to_le_bytes())),
            Targets::Values(v) => v.iter().for_each(|t| h.update(t.to_le_bytes())),
        }
        hex::encode(&h.finalize()[..16])
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn clamp_mmse(v: f64) -> f64 {
    v.clamp(MMSE_MIN, MMSE_MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.0]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(
            Dataset::from_rows(&[vec![1.0]], Targets::Classes(vec![3])),
            Err(LearnerError::InvalidDataset(_))
        ));
        assert!(matches!(
            Dataset::from_rows(&[vec![f64::NAN]], Targets::Classes(vec![0])),
            Err(LearnerError::InvalidDataset(_))
        ));
        assert!(matches!(
            Dataset::from_rows(&[vec![1.0]], Targets::Values(vec![31.0])),
            Err(LearnerError::InvalidDataset(_))
        ));
        assert!(matches!(Dataset::from_rows(&[], Targets::Values(vec![])), Err(LearnerError::DegenerateDataset(_))));
    }

    #[test]
    fn canonical_sorts_by_id() {
        let fm = FeatureMatrix::new(
            vec!["b".into(), "a".into()],
            vec!["x".into()],
            Matrix::from_rows(&[vec![2.0], vec![1.0]]),
        )
        .unwrap();
        let d = Dataset::new(fm, Targets::Classes(vec![1, 0])).unwrap().canonical();
        assert_eq!(d.features.ids, vec!["a", "b"]);
        assert_eq!(d.classes().unwrap(), &[0, 1]);
        assert_eq!(d.features.x.row(0), &[1.0]);
    }
}
