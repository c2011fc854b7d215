use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, TreeParams, TreeTarget};
use super::{Dataset, LearnerError, Matrix, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbmParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams { n_estimators: 100, learning_rate: 0.1, max_depth: 3, seed: 0 }
    }
}

/// Least-squares gradient boosting: `mean + lr * sum(tree(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<DecisionTree>,
}

impl GradientBoosting {
    pub fn fit(d: &Dataset, hp: &GbmParams) -> Result<Self, LearnerError> {
        if !(hp.learning_rate > 0.0 && hp.learning_rate <= 1.0) {
            return Err(LearnerError::InvalidHyperparameter {
                name: "learning_rate".into(),
                reason: "must lie in (0, 1]".into(),
            });
        }
        let d = d.canonical();
        let y = d.values().ok_or(LearnerError::WrongTask { expected: TaskKind::Regression })?;
        let x = &d.features.x;
        let n = d.len();
        let init = y.iter().sum::<f64>() / n as f64;
        let params = TreeParams { max_depth: Some(hp.max_depth), min_samples_leaf: 1, features_per_split: None };
        // all features are considered at every split, so the stream is never drawn from
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);

        let mut f = vec![init; n];
        let mut residual = vec![0.0; n];
        let ones = vec![1.0; n];
        let mut trees = Vec::with_capacity(hp.n_estimators);
        for _ in 0..hp.n_estimators {
            for i in 0..n {
                residual[i] = y[i] - f[i];
            }
            let tree = DecisionTree::fit(x, TreeTarget::Values(&residual), &ones, &params, &mut rng);
            for (i, fi) in f.iter_mut().enumerate() {
                *fi += hp.learning_rate * tree.predict_value(x.row(i));
            }
            trees.push(tree);
        }
        Ok(GradientBoosting { init, learning_rate: hp.learning_rate, trees })
    }

    /// Unclamped predictions using only the first `stages` trees.
    pub fn predict_staged(&self, x: &Matrix, stages: usize) -> Vec<f64> {
        x.iter_rows()
            .map(|row| {
                self.init
                    + self.learning_rate * self.trees.iter().take(stages).map(|t| t.predict_value(row)).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_values(&self, x: &Matrix) -> Vec<f64> {
        self.predict_staged(x, self.trees.len())
    }
}
