use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, TreeParams, TreeTarget};
use super::{Dataset, LearnerError, Matrix, Targets, TaskKind, N_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Defaults to `floor(sqrt(D))` when unset.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, max_depth: None, min_samples_leaf: 1, features_per_split: None, seed: 0 }
    }
}

/// Bagged CART trees with per-split feature subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub task: TaskKind,
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Tree `t` draws its bootstrap and feature samples from `seed + t`, so the
    /// result does not depend on how trees are scheduled across threads.
    pub fn fit(d: &Dataset, hp: &ForestParams) -> Result<RandomForest, LearnerError> {
        if hp.n_trees == 0 {
            return Err(LearnerError::InvalidHyperparameter { name: "n_trees".into(), reason: "must be >= 1".into() });
        }
        let d = d.canonical();
        let n = d.len();
        let dims = d.n_features();
        let features_per_split =
            hp.features_per_split.unwrap_or_else(|| ((dims as f64).sqrt().floor() as usize).max(1));
        let params = TreeParams {
            max_depth: hp.max_depth,
            min_samples_leaf: hp.min_samples_leaf,
            features_per_split: Some(features_per_split),
        };
        let x = &d.features.x;
        let trees = (0..hp.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(hp.seed.wrapping_add(t as u64));
                let mut weights = vec![0.0; n];
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1.0;
                }
                let target = match &d.targets {
                    Targets::Classes(c) => TreeTarget::Classes(c),
                    Targets::Values(v) => TreeTarget::Values(v),
                };
                DecisionTree::fit(x, target, &weights, &params, &mut rng)
            })
            .collect();
        Ok(RandomForest { task: d.kind(), trees })
    }

    pub fn predict_proba(&self, x: &Matrix) -> Vec<[f64; N_CLASSES]> {
        let k = self.trees.len() as f64;
        x.iter_rows()
            .map(|row| {
                let mut p = [0.0; N_CLASSES];
                for t in &self.trees {
                    for (acc, v) in p.iter_mut().zip(t.predict_proba(row)) {
                        *acc += v;
                    }
                }
                p.map(|v| v / k)
            })
            .collect()
    }

    pub fn predict_values(&self, x: &Matrix) -> Vec<f64> {
        let k = self.trees.len() as f64;
        x.iter_rows().map(|row| self.trees.iter().map(|t| t.predict_value(row)).sum::<f64>() / k).collect()
    }
}
