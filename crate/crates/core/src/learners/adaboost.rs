//! Multi-class SAMME for classification and AdaBoost.R2 (linear loss,
//! weighted-median aggregation) for regression.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, TreeParams, TreeTarget};
use super::{Dataset, LearnerError, Matrix, N_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaBoostParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    /// Depth of each weak learner; 1 (stumps) for classification and 3 for
    /// regression when unset.
    pub base_depth: Option<usize>,
    pub seed: u64,
}

impl Default for AdaBoostParams {
    fn default() -> Self {
        AdaBoostParams { n_estimators: 50, learning_rate: 1.0, base_depth: None, seed: 0 }
    }
}

impl AdaBoostParams {
    fn check(&self) -> Result<(), LearnerError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LearnerError::InvalidHyperparameter {
                name: "learning_rate".into(),
                reason: "must be positive and finite".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub tree: DecisionTree,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostClassifier {
    pub stages: Vec<Stage>,
    /// Set when no stage beat chance; predictions are then the class prior.
    pub fallback_prior: Option<[f64; N_CLASSES]>,
}

impl AdaBoostClassifier {
    pub fn fit(d: &Dataset, hp: &AdaBoostParams) -> Result<Self, LearnerError> {
        hp.check()?;
        let d = d.canonical();
        let y = d.classes().ok_or(LearnerError::WrongTask { expected: super::TaskKind::Classification })?;
        let x = &d.features.x;
        let n = d.len();
        let k = N_CLASSES as f64;
        let params =
            TreeParams { max_depth: Some(hp.base_depth.unwrap_or(1)), min_samples_leaf: 1, features_per_split: None };
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);

        let mut prior = [0.0; N_CLASSES];
        y.iter().for_each(|&c| prior[c] += 1.0 / n as f64);

        let mut w = vec![1.0 / n as f64; n];
        let mut stages = Vec::new();
        for _ in 0..hp.n_estimators {
            let tree = DecisionTree::fit(x, TreeTarget::Classes(y), &w, &params, &mut rng);
            let miss: Vec<bool> = (0..n).map(|i| tree.predict_class(x.row(i)) != y[i]).collect();
            let total: f64 = w.iter().sum();
            let err = miss.iter().zip(&w).filter(|(m, _)| **m).map(|(_, wi)| wi).sum::<f64>() / total;
            if err >= 1.0 - 1.0 / k {
                break;
            }
            // a perfect stage gets the weight of a 1e-10 error and ends boosting
            let e = err.max(1e-10);
            let alpha = hp.learning_rate * (((1.0 - e) / e).ln() + (k - 1.0).ln());
            stages.push(Stage { tree, weight: alpha });
            if err <= 0.0 {
                break;
            }
            for (wi, m) in w.iter_mut().zip(&miss) {
                if *m {
                    *wi *= alpha.exp();
                }
            }
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|wi| *wi /= s);
        }
        let fallback_prior = stages.is_empty().then_some(prior);
        Ok(AdaBoostClassifier { stages, fallback_prior })
    }

    /// Softmax of the alpha-weighted votes scaled by `1 / (K - 1)`.
    pub fn predict_proba(&self, x: &Matrix) -> Vec<[f64; N_CLASSES]> {
        if let Some(p) = self.fallback_prior {
            return vec![p; x.rows()];
        }
        let total: f64 = self.stages.iter().map(|s| s.weight).sum();
        x.iter_rows()
            .map(|row| {
                let mut score = [0.0; N_CLASSES];
                for s in &self.stages {
                    score[s.tree.predict_class(row)] += s.weight;
                }
                let z = score.map(|v| v / total / (N_CLASSES as f64 - 1.0));
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e = z.map(|v| (v - m).exp());
                let s: f64 = e.iter().sum();
                e.map(|v| v / s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostRegressor {
    pub stages: Vec<Stage>,
    /// Set when no stage was accepted; predictions are then the target mean.
    pub fallback_mean: Option<f64>,
}

impl AdaBoostRegressor {
    pub fn fit(d: &Dataset, hp: &AdaBoostParams) -> Result<Self, LearnerError> {
        hp.check()?;
        let d = d.canonical();
        let y = d.values().ok_or(LearnerError::WrongTask { expected: super::TaskKind::Regression })?;
        let x = &d.features.x;
        let n = d.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        if y.iter().all(|&v| v == y[0]) {
            return Ok(AdaBoostRegressor { stages: Vec::new(), fallback_mean: Some(y[0]) });
        }
        let params =
            TreeParams { max_depth: Some(hp.base_depth.unwrap_or(3)), min_samples_leaf: 1, features_per_split: None };
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);

        let mut w = vec![1.0 / n as f64; n];
        let mut stages = Vec::new();
        for _ in 0..hp.n_estimators {
            let sampler = WeightedIndex::new(&w).map_err(|e| LearnerError::DivergedTraining(e.to_string()))?;
            let mut counts = vec![0.0; n];
            for _ in 0..n {
                counts[sampler.sample(&mut rng)] += 1.0;
            }
            let tree = DecisionTree::fit(x, TreeTarget::Values(y), &counts, &params, &mut rng);
            let abs_err: Vec<f64> = (0..n).map(|i| (tree.predict_value(x.row(i)) - y[i]).abs()).collect();
            let max_err = abs_err.iter().cloned().fold(0.0, f64::max);
            if max_err <= 0.0 {
                stages.push(Stage { tree, weight: 1.0 });
                break;
            }
            let loss: Vec<f64> = abs_err.iter().map(|e| e / max_err).collect();
            let avg_loss: f64 = loss.iter().zip(&w).map(|(l, wi)| l * wi).sum::<f64>() / w.iter().sum::<f64>();
            if avg_loss >= 0.5 {
                break;
            }
            // guard the log when the tree fits all but a vanishing fraction of weight
            let beta = (avg_loss / (1.0 - avg_loss)).max(1e-300);
            let weight = hp.learning_rate * (1.0 / beta).ln();
            if !(weight > 0.0 && weight.is_finite()) {
                break;
            }
            stages.push(Stage { tree, weight });
            for (wi, l) in w.iter_mut().zip(&loss) {
                *wi *= beta.powf((1.0 - l) * hp.learning_rate);
            }
            let s: f64 = w.iter().sum();
            if s.is_nan() || s <= 0.0 {
                break;
            }
            w.iter_mut().for_each(|wi| *wi /= s);
        }
        let fallback_mean = stages.is_empty().then_some(mean);
        Ok(AdaBoostRegressor { stages, fallback_mean })
    }

    /// Weighted median of stage predictions.
    pub fn predict_values(&self, x: &Matrix) -> Vec<f64> {
        if let Some(m) = self.fallback_mean {
            return vec![m; x.rows()];
        }
        let total: f64 = self.stages.iter().map(|s| s.weight).sum();
        x.iter_rows()
            .map(|row| {
                let mut preds: Vec<(f64, f64)> =
                    self.stages.iter().map(|s| (s.tree.predict_value(row), s.weight)).collect();
                preds.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut acc = 0.0;
                for (p, wt) in &preds {
                    acc += wt;
                    if acc >= 0.5 * total {
                        return *p;
                    }
                }
                preds.last().map_or(0.0, |p| p.0)
            })
            .collect()
    }
}
