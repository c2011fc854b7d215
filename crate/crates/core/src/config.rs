//! Run configuration (TOML). Flags override file values, file values
//! override built-in defaults; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::DEFAULT_EMBEDDING_DIM;
use crate::ensemble::{
    build_submission_config, FeatureSource, ModelSpec, SubmissionConfig, TrainSplit, SUBMISSION_NAMES,
};
use crate::eval::Grid;
use crate::features::{CountingRules, MissingTaskPolicy};
use crate::learners::ModelKind;
use crate::pipeline::PipelineOptions;
use crate::transcript::Task;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TaskSelection {
    #[serde(rename = "CTD")]
    Ctd,
    #[serde(rename = "SF")]
    Sf,
    #[serde(rename = "PF")]
    Pf,
    #[default]
    #[serde(rename = "all")]
    All,
}

impl TaskSelection {
    pub fn tasks(self) -> Vec<Task> {
        match self {
            TaskSelection::Ctd => vec![Task::Ctd],
            TaskSelection::Sf => vec![Task::Sf],
            TaskSelection::Pf => vec![Task::Pf],
            TaskSelection::All => Task::ALL.to_vec(),
        }
    }
}

impl std::str::FromStr for TaskSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CTD" => Ok(TaskSelection::Ctd),
            "SF" => Ok(TaskSelection::Sf),
            "PF" => Ok(TaskSelection::Pf),
            "all" => Ok(TaskSelection::All),
            other => Err(format!("unknown task selection {other:?} (CTD, SF, PF or all)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub task: TaskSelection,
    /// One of cls1..cls3, reg1..reg3; `features`, `model`, `train_split` and
    /// `grid_search` below override its parts.
    pub submission: String,
    pub features: Option<FeatureSource>,
    pub model: Option<ModelSpec>,
    pub train_split: Option<TrainSplit>,
    pub grid_search: Option<bool>,
    pub k: usize,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub missing_task_policy: MissingTaskPolicy,
    pub embedding_dim: usize,
    pub rules: CountingRules,
    pub grid: BTreeMap<ModelKind, Grid>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            dev_manifest: None,
            test_manifest: None,
            out: PathBuf::from("out"),
            task: TaskSelection::All,
            submission: "cls1".into(),
            features: None,
            model: None,
            train_split: None,
            grid_search: None,
            k: 5,
            seed: 0,
            jobs: None,
            missing_task_policy: MissingTaskPolicy::ZeroFill,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            rules: CountingRules::default(),
            grid: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// The defaults with every implicit choice spelled out: the selected
    /// submission's model and all four default grids.
    pub fn reference() -> Self {
        let sub = build_submission_config("cls1").expect("built-in name");
        RunConfig {
            features: Some(sub.features),
            model: Some(sub.model),
            train_split: Some(sub.train_split),
            grid_search: Some(sub.grid_search),
            grid: [ModelKind::RandomForest, ModelKind::AdaBoost, ModelKind::GradientBoosting, ModelKind::Dnn]
                .into_iter()
                .map(|k| (k, k.default_grid()))
                .collect(),
            ..RunConfig::default()
        }
    }

    pub fn dump(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn submission_config(&self) -> Result<SubmissionConfig, ConfigError> {
        let mut sub = build_submission_config(&self.submission).map_err(|_| {
            ConfigError::Invalid(format!(
                "unknown submission {:?}; expected one of {SUBMISSION_NAMES:?}",
                self.submission
            ))
        })?;
        if let Some(f) = self.features {
            sub.features = f;
        }
        if let Some(m) = &self.model {
            sub.model = m.clone();
        }
        if let Some(s) = self.train_split {
            sub.train_split = s;
        }
        if let Some(g) = self.grid_search {
            sub.grid_search = g;
        }
        Ok(sub)
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            seed: self.seed,
            k: self.k,
            rules: self.rules.clone(),
            missing_task_policy: self.missing_task_policy,
            embedding_dim: self.embedding_dim,
            grids: self.grid.clone(),
        }
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1".into());
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be at least 1".into());
        }
        let sub = self.submission_config()?;
        if sub.model.members.is_empty() {
            return bad("model has no members".into());
        }
        if let Some(w) = &sub.model.weights {
            if w.len() != sub.model.members.len() || w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return bad("model weights must be positive, finite and one per member".into());
            }
        }
        for (kind, grid) in &self.grid {
            if grid.is_empty() || grid.values().any(Vec::is_empty) {
                return bad(format!("grid for {kind} is empty"));
            }
            for (key, values) in grid {
                for v in values {
                    kind.default_params()
                        .set(key, v)
                        .map_err(|e| ConfigError::Invalid(format!("grid for {kind}: {e}")))?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_trips() {
        let text = RunConfig::reference().dump();
        let back = RunConfig::from_toml(&text, "dump").unwrap();
        assert_eq!(back, RunConfig::reference());
        back.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("seeed = 3", "x").is_err());
        assert!(RunConfig::from_toml("[rules]\nfilers = [\"um\"]", "x").is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::from_toml("submission = \"reg3\"\ntrain_split = \"train\"\nseed = 7", "x").unwrap();
        let s = c.submission_config().unwrap();
        assert_eq!(s.train_split, TrainSplit::Train);
        assert_eq!(s.features, FeatureSource::EmbeddingCtd);
        assert_eq!(c.pipeline_options().seed, 7);
    }

    #[test]
    fn validation() {
        assert!(RunConfig { k: 1, ..Default::default() }.validate().is_err());
        assert!(RunConfig { submission: "cls9".into(), ..Default::default() }.validate().is_err());
        let c = RunConfig::from_toml("[grid.random_forest]\nn_estimators = [1]", "x").unwrap();
        assert!(c.validate().is_err());
    }
}
