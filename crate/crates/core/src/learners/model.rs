//! Uniform model surface: fit from declarative hyperparameters, predict with
//! schema checks, and a checksummed binary container.
//!
//! Container layout: `CVXM` magic, one format-version byte, payload length
//! (u64 LE), JSON payload, then the SHA-256 of everything before it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    clamp_mmse, AdaBoostClassifier, AdaBoostParams, AdaBoostRegressor, Dataset, DnnParams, FeatureMatrix, ForestParams,
    GbmParams, GradientBoosting, LearnerError, Mlp, RandomForest, TaskKind, N_CLASSES,
};

pub const MODEL_MAGIC: &[u8; 4] = b"CVXM";
pub const MODEL_FORMAT_VERSION: u8 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RandomForest,
    #[serde(rename = "adaboost")]
    AdaBoost,
    GradientBoosting,
    Dnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::RandomForest => "random_forest",
            ModelKind::AdaBoost => "adaboost",
            ModelKind::GradientBoosting => "gradient_boosting",
            ModelKind::Dnn => "dnn",
        }
    }

    pub fn default_params(self) -> Hyperparams {
        match self {
            ModelKind::RandomForest => Hyperparams::RandomForest(ForestParams::default()),
            ModelKind::AdaBoost => Hyperparams::AdaBoost(AdaBoostParams::default()),
            ModelKind::GradientBoosting => Hyperparams::GradientBoosting(GbmParams::default()),
            ModelKind::Dnn => Hyperparams::Dnn(DnnParams::default()),
        }
    }

    /// Search space used when a pipeline asks for grid search without
    /// supplying its own grid.
    pub fn default_grid(self) -> BTreeMap<String, Vec<ParamValue>> {
        use ParamValue::*;
        let mut g = BTreeMap::new();
        let mut put = |k: &str, v: Vec<ParamValue>| {
            g.insert(k.to_string(), v);
        };
        match self {
            ModelKind::RandomForest => {
                put("n_trees", vec![Int(100), Int(300)]);
                put("max_depth", vec![Null, Int(8)]);
                put("min_samples_leaf", vec![Int(1), Int(3)]);
            }
            ModelKind::AdaBoost => {
                put("n_estimators", vec![Int(50), Int(200)]);
                put("learning_rate", vec![Float(0.5), Float(1.0)]);
            }
            ModelKind::GradientBoosting => {
                put("n_estimators", vec![Int(100), Int(300)]);
                put("learning_rate", vec![Float(0.05), Float(0.1)]);
                put("max_depth", vec![Int(2), Int(3)]);
            }
            ModelKind::Dnn => {
                put("hidden_sizes", vec![IntList(vec![64]), IntList(vec![128, 64])]);
                put("learning_rate", vec![Float(1e-3), Float(1e-2)]);
            }
        }
        g
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random_forest" => Ok(ModelKind::RandomForest),
            "adaboost" => Ok(ModelKind::AdaBoost),
            "gradient_boosting" => Ok(ModelKind::GradientBoosting),
            "dnn" => Ok(ModelKind::Dnn),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

/// A single grid or config value.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    IntList(Vec<i64>),
    /// Written `"none"` in configs; an unbounded depth or automatic choice.
    Null,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawParam {
    Int(i64),
    Float(f64),
    IntList(Vec<i64>),
    Text(String),
}

impl Serialize for ParamValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ParamValue::Int(i) => RawParam::Int(*i),
            ParamValue::Float(x) => RawParam::Float(*x),
            ParamValue::IntList(v) => RawParam::IntList(v.clone()),
            ParamValue::Null => RawParam::Text("none".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match RawParam::deserialize(d)? {
            RawParam::Int(i) => ParamValue::Int(i),
            RawParam::Float(x) => ParamValue::Float(x),
            RawParam::IntList(v) => ParamValue::IntList(v),
            RawParam::Text(t) if t == "none" => ParamValue::Null,
            RawParam::Text(t) => {
                return Err(serde::de::Error::custom(format!("expected a number, a list or \"none\", got {t:?}")))
            }
        })
    }
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
            ParamValue::IntList(v) => {
                let s: Vec<String> = v.iter().map(i64::to_string).collect();
                write!(f, "[{}]", s.join(","))
            }
            ParamValue::Null => f.write_str("none"),
        }
    }
}

impl ParamValue {
    fn as_usize(&self, name: &str) -> Result<usize, LearnerError> {
        match self {
            ParamValue::Int(i) if *i >= 0 => Ok(*i as usize),
            ParamValue::Float(x) if *x >= 0.0 && x.fract() == 0.0 => Ok(*x as usize),
            _ => Err(bad(name, format!("expected a non-negative integer, got {self}"))),
        }
    }

    fn as_opt_usize(&self, name: &str) -> Result<Option<usize>, LearnerError> {
        match self {
            ParamValue::Null => Ok(None),
            other => other.as_usize(name).map(Some),
        }
    }

    fn as_f64(&self, name: &str) -> Result<f64, LearnerError> {
        match self {
            ParamValue::Int(i) => Ok(*i as f64),
            ParamValue::Float(x) => Ok(*x),
            _ => Err(bad(name, format!("expected a number, got {self}"))),
        }
    }

    fn as_sizes(&self, name: &str) -> Result<Vec<usize>, LearnerError> {
        match self {
            ParamValue::IntList(v) if v.iter().all(|&i| i > 0) => Ok(v.iter().map(|&i| i as usize).collect()),
            _ => Err(bad(name, format!("expected a list of positive integers, got {self}"))),
        }
    }
}

fn bad(name: &str, reason: String) -> LearnerError {
    LearnerError::InvalidHyperparameter { name: name.to_string(), reason }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hyperparams {
    RandomForest(ForestParams),
    #[serde(rename = "adaboost")]
    AdaBoost(AdaBoostParams),
    GradientBoosting(GbmParams),
    Dnn(DnnParams),
}

impl Hyperparams {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparams::RandomForest(_) => ModelKind::RandomForest,
            Hyperparams::AdaBoost(_) => ModelKind::AdaBoost,
            Hyperparams::GradientBoosting(_) => ModelKind::GradientBoosting,
            Hyperparams::Dnn(_) => ModelKind::Dnn,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Hyperparams::RandomForest(p) => p.seed,
            Hyperparams::AdaBoost(p) => p.seed,
            Hyperparams::GradientBoosting(p) => p.seed,
            Hyperparams::Dnn(p) => p.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Hyperparams::RandomForest(p) => p.seed = seed,
            Hyperparams::AdaBoost(p) => p.seed = seed,
            Hyperparams::GradientBoosting(p) => p.seed = seed,
            Hyperparams::Dnn(p) => p.seed = seed,
        }
    }

    /// Overrides one named hyperparameter.
    pub fn set(&mut self, name: &str, v: &ParamValue) -> Result<(), LearnerError> {
        match (self, name) {
            (_, "seed") => return Err(bad(name, "the seed comes from the run, not the grid".into())),
            (Hyperparams::RandomForest(p), "n_trees") => p.n_trees = v.as_usize(name)?,
            (Hyperparams::RandomForest(p), "max_depth") => p.max_depth = v.as_opt_usize(name)?,
            (Hyperparams::RandomForest(p), "min_samples_leaf") => p.min_samples_leaf = v.as_usize(name)?,
            (Hyperparams::RandomForest(p), "features_per_split") => p.features_per_split = v.as_opt_usize(name)?,
            (Hyperparams::AdaBoost(p), "n_estimators") => p.n_estimators = v.as_usize(name)?,
            (Hyperparams::AdaBoost(p), "learning_rate") => p.learning_rate = v.as_f64(name)?,
            (Hyperparams::AdaBoost(p), "base_depth") => p.base_depth = v.as_opt_usize(name)?,
            (Hyperparams::GradientBoosting(p), "n_estimators") => p.n_estimators = v.as_usize(name)?,
            (Hyperparams::GradientBoosting(p), "learning_rate") => p.learning_rate = v.as_f64(name)?,
            (Hyperparams::GradientBoosting(p), "max_depth") => p.max_depth = v.as_usize(name)?,
            (Hyperparams::Dnn(p), "hidden_sizes") => p.hidden_sizes = v.as_sizes(name)?,
            (Hyperparams::Dnn(p), "epochs") => p.epochs = v.as_usize(name)?,
            (Hyperparams::Dnn(p), "batch_size") => p.batch_size = v.as_usize(name)?,
            (Hyperparams::Dnn(p), "learning_rate") => p.learning_rate = v.as_f64(name)?,
            (Hyperparams::Dnn(p), "l2") => p.l2 = v.as_f64(name)?,
            (hp, _) => return Err(bad(name, format!("not a {} hyperparameter", hp.kind()))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FittedState {
    RandomForest(RandomForest),
    AdaBoostClassifier(AdaBoostClassifier),
    AdaBoostRegressor(AdaBoostRegressor),
    GradientBoosting(GradientBoosting),
    Dnn(Mlp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub task: TaskKind,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub columns: Vec<String>,
    pub n_train: usize,
    /// True when boosting fell back to a prior/mean predictor.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub hyperparams: Hyperparams,
    pub meta: ModelMeta,
    pub state: FittedState,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// One probability row per input row, summing to 1.
    Probabilities(Vec<[f64; N_CLASSES]>),
    /// Class indices, from hard voting.
    Labels(Vec<usize>),
    /// MMSE estimates clamped to [0, 30].
    Values(Vec<f64>),
}

impl Prediction {
    pub fn labels(&self) -> Option<Vec<usize>> {
        match self {
            Prediction::Probabilities(p) => Some(p.iter().map(|r| super::argmax(r)).collect()),
            Prediction::Labels(l) => Some(l.clone()),
            Prediction::Values(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Prediction::Probabilities(p) => p.len(),
            Prediction::Labels(l) => l.len(),
            Prediction::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fits the learner described by `hp` on `d`.
pub fn fit_model(hp: &Hyperparams, d: &Dataset) -> Result<TrainedModel, LearnerError> {
    let task = d.kind();
    let state = match (hp, task) {
        (Hyperparams::RandomForest(p), _) => FittedState::RandomForest(RandomForest::fit(d, p)?),
        (Hyperparams::AdaBoost(p), TaskKind::Classification) => {
            FittedState::AdaBoostClassifier(AdaBoostClassifier::fit(d, p)?)
        }
        (Hyperparams::AdaBoost(p), TaskKind::Regression) => {
            FittedState::AdaBoostRegressor(AdaBoostRegressor::fit(d, p)?)
        }
        (Hyperparams::GradientBoosting(p), _) => FittedState::GradientBoosting(GradientBoosting::fit(d, p)?),
        (Hyperparams::Dnn(p), _) => FittedState::Dnn(Mlp::fit(d, p)?),
    };
    let fallback = match &state {
        FittedState::AdaBoostClassifier(m) => m.fallback_prior.is_some(),
        FittedState::AdaBoostRegressor(m) => m.fallback_mean.is_some(),
        _ => false,
    };
    Ok(TrainedModel {
        hyperparams: hp.clone(),
        meta: ModelMeta {
            task,
            seed: hp.seed(),
            dataset_fingerprint: d.fingerprint(),
            columns: d.features.columns.clone(),
            n_train: d.len(),
            fallback,
        },
        state,
    })
}

impl TrainedModel {
    pub fn task(&self) -> TaskKind {
        self.meta.task
    }

    pub fn kind(&self) -> ModelKind {
        self.hyperparams.kind()
    }

    pub fn check_schema(&self, columns: &[String]) -> Result<(), LearnerError> {
        if columns.len() != self.meta.columns.len() {
            return Err(LearnerError::SchemaMismatch(format!(
                "model has {} features, input has {}",
                self.meta.columns.len(),
                columns.len()
            )));
        }
        if let Some((i, (a, b))) = self.meta.columns.iter().zip(columns).enumerate().find(|(_, (a, b))| a != b) {
            return Err(LearnerError::SchemaMismatch(format!("column {i}: model has {a:?}, input has {b:?}")));
        }
        Ok(())
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Prediction, LearnerError> {
        self.check_schema(&x.columns)?;
        let m = &x.x;
        Ok(match &self.state {
            FittedState::RandomForest(f) => match f.task {
                TaskKind::Classification => Prediction::Probabilities(f.predict_proba(m)),
                TaskKind::Regression => Prediction::Values(f.predict_values(m)),
            },
            FittedState::AdaBoostClassifier(a) => Prediction::Probabilities(a.predict_proba(m)),
            FittedState::AdaBoostRegressor(a) => Prediction::Values(a.predict_values(m)),
            FittedState::GradientBoosting(g) => Prediction::Values(g.predict_values(m)),
            FittedState::Dnn(n) => Prediction::Probabilities(n.predict_proba(m)),
        }
        .clamped())
    }
}

impl Prediction {
    fn clamped(self) -> Prediction {
        match self {
            Prediction::Values(v) => Prediction::Values(v.into_iter().map(clamp_mmse).collect()),
            p => p,
        }
    }
}

pub fn save_model(m: &TrainedModel) -> Vec<u8> {
    let payload = serde_json::to_vec(m).expect("model state serializes");
    seal(MODEL_MAGIC, &payload)
}

pub fn load_model(bytes: &[u8]) -> Result<TrainedModel, LearnerError> {
    let payload = unseal(MODEL_MAGIC, bytes)?;
    serde_json::from_slice(payload).map_err(|e| LearnerError::Corrupt(e.to_string()))
}

/// Frames a payload: magic, version, length, payload, SHA-256.
pub(crate) fn seal(magic: &[u8; 4], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 13 + CHECKSUM_LEN);
    out.extend_from_slice(magic);
    out.push(MODEL_FORMAT_VERSION);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub(crate) fn unseal<'a>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<&'a [u8], LearnerError> {
    if bytes.len() < 5 {
        return Err(LearnerError::ChecksumFailure);
    }
    if &bytes[..4] != magic {
        return Err(LearnerError::BadMagic);
    }
    if bytes[4] != MODEL_FORMAT_VERSION {
        return Err(LearnerError::VersionMismatch { found: bytes[4], expected: MODEL_FORMAT_VERSION });
    }
    if bytes.len() < 13 + CHECKSUM_LEN {
        return Err(LearnerError::ChecksumFailure);
    }
    let len = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    if Some(bytes.len()) != len.checked_add(13 + CHECKSUM_LEN) {
        return Err(LearnerError::ChecksumFailure);
    }
    let (body, digest) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(LearnerError::ChecksumFailure);
    }
    Ok(&body[13..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_rejects_foreign_keys() {
        let mut hp = ModelKind::GradientBoosting.default_params();
        assert!(hp.set("n_trees", &ParamValue::Int(3)).is_err());
        hp.set("max_depth", &ParamValue::Int(2)).unwrap();
        assert!(hp.set("max_depth", &ParamValue::Null).is_err());
        let mut rf = ModelKind::RandomForest.default_params();
        rf.set("max_depth", &ParamValue::Null).unwrap();
        rf.set("n_trees", &ParamValue::Float(30.0)).unwrap();
        assert!(rf.set("n_trees", &ParamValue::Float(2.5)).is_err());
    }

    #[test]
    fn param_values_parse_from_toml() {
        #[derive(Deserialize)]
        struct G {
            v: Vec<ParamValue>,
        }
        let g: G = toml::from_str("v = [1, 0.5, [64, 32], \"none\"]").unwrap();
        assert_eq!(
            g.v,
            vec![ParamValue::Int(1), ParamValue::Float(0.5), ParamValue::IntList(vec![64, 32]), ParamValue::Null]
        );
        assert!(toml::from_str::<G>("v = [\"auto\"]").is_err());
    }

    #[test]
    fn seal_unseal() {
        let sealed = seal(MODEL_MAGIC, b"{}");
        assert_eq!(unseal(MODEL_MAGIC, &sealed).unwrap(), b"{}");
        assert_eq!(unseal(b"XXXX", &sealed), Err(LearnerError::BadMagic));
        let mut flipped = sealed.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert_eq!(unseal(MODEL_MAGIC, &flipped), Err(LearnerError::ChecksumFailure));
    }
}
