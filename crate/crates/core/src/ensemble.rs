//! Hard/soft voting classifiers, the averaging voting regressor, and the six
//! named submission configurations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::{
    argmax, fit_model, load_model, save_model, seal, unseal, AdaBoostParams, Dataset, DnnParams, FeatureMatrix,
    ForestParams, GbmParams, Hyperparams, LearnerError, ModelKind, Prediction, TaskKind, TrainedModel, MMSE_MAX,
    MMSE_MIN, N_CLASSES,
};

pub const ENSEMBLE_MAGIC: &[u8; 4] = b"CVXE";

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("ensemble has no members")]
    NoMembers,
    #[error("ensemble members disagree on task type")]
    MixedTaskMembers,
    #[error("{vote:?} voting cannot combine {task} members")]
    VoteKindMismatch { vote: VoteKind, task: TaskKind },
    #[error("member schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid member weights: {0}")]
    InvalidWeights(String),
    #[error("unknown submission configuration {0:?}")]
    UnknownConfigName(String),
    #[error("member {index}: {source}")]
    Member { index: usize, source: LearnerError },
    #[error("ensemble container: {0}")]
    Container(LearnerError),
    #[error("ensemble container is corrupt: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteKind {
    Hard,
    Soft,
    RegressorMean,
}

impl VoteKind {
    fn task(self) -> TaskKind {
        match self {
            VoteKind::Hard | VoteKind::Soft => TaskKind::Classification,
            VoteKind::RegressorMean => TaskKind::Regression,
        }
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<(), EnsembleError> {
    if weights.len() != n {
        return Err(EnsembleError::InvalidWeights(format!("{} weights for {n} members", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(EnsembleError::InvalidWeights(format!("weight {w} is not positive and finite")));
    }
    Ok(())
}

fn normalized(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Weighted mean of member probability rows. Rows are renormalized only when
/// their sum drifts from 1 by more than 1e-9.
pub fn vote_soft(members: &[Vec<[f64; N_CLASSES]>], weights: &[f64]) -> Vec<[f64; N_CLASSES]> {
    let w = normalized(weights);
    let n = members.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let mut p = [0.0; N_CLASSES];
            for (m, wm) in members.iter().zip(&w) {
                for c in 0..N_CLASSES {
                    p[c] += wm * m[i][c];
                }
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                p.iter_mut().for_each(|v| *v /= s);
            }
            p
        })
        .collect()
}

/// Weighted plurality of member argmaxes; ties go to the larger summed soft
/// score among the tied classes, then to the lower class index.
pub fn vote_hard(members: &[Vec<[f64; N_CLASSES]>], weights: &[f64]) -> Vec<usize> {
    let n = members.first().map_or(0, Vec::len);
    let total: f64 = weights.iter().sum();
    let tol = 1e-9 * total;
    (0..n)
        .map(|i| {
            let mut votes = [0.0; N_CLASSES];
            let mut soft = [0.0; N_CLASSES];
            for (m, w) in members.iter().zip(weights) {
                votes[argmax(&m[i])] += w;
                for c in 0..N_CLASSES {
                    soft[c] += w * m[i][c];
                }
            }
            let top = votes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = (0..N_CLASSES).filter(|&c| votes[c] >= top - tol).collect();
            let mut best = tied[0];
            for &c in &tied[1..] {
                if soft[c] > soft[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Weighted mean of member predictions, clamped to the MMSE range.
pub fn vote_regress(members: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let w = normalized(weights);
    let n = members.first().map_or(0, Vec::len);
    (0..n).map(|i| members.iter().zip(&w).map(|(m, wm)| wm * m[i]).sum::<f64>().clamp(MMSE_MIN, MMSE_MAX)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VotingEnsemble {
    members: Vec<TrainedModel>,
    vote: VoteKind,
    weights: Vec<f64>,
}

impl VotingEnsemble {
    pub fn new(members: Vec<TrainedModel>, vote: VoteKind, weights: Option<Vec<f64>>) -> Result<Self, EnsembleError> {
        let first = members.first().ok_or(EnsembleError::NoMembers)?;
        let task = first.task();
        if members.iter().any(|m| m.task() != task) {
            return Err(EnsembleError::MixedTaskMembers);
        }
        if vote.task() != task {
            return Err(EnsembleError::VoteKindMismatch { vote, task });
        }
        for (i, m) in members.iter().enumerate().skip(1) {
            first
                .check_schema(&m.meta.columns)
                .map_err(|e| EnsembleError::SchemaMismatch(format!("member {i}: {e}")))?;
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; members.len()]);
        check_weights(&weights, members.len())?;
        Ok(VotingEnsemble { members, vote, weights })
    }

    pub fn members(&self) -> &[TrainedModel] {
        &self.members
    }

    pub fn vote(&self) -> VoteKind {
        self.vote
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn task(&self) -> TaskKind {
        self.vote.task()
    }

    pub fn columns(&self) -> &[String] {
        &self.members[0].meta.columns
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Prediction, EnsembleError> {
        let outs = self
            .members
            .par_iter()
            .enumerate()
            .map(|(index, m)| m.predict(x).map_err(|source| EnsembleError::Member { index, source }))
            .collect::<Result<Vec<_>, _>>()?;
        match self.vote {
            VoteKind::Soft | VoteKind::Hard => {
                let probs: Vec<Vec<[f64; N_CLASSES]>> = outs
                    .into_iter()
                    .map(|p| match p {
                        Prediction::Probabilities(p) => p,
                        _ => unreachable!("classifier members return probabilities"),
                    })
                    .collect();
                Ok(if self.vote == VoteKind::Soft {
                    Prediction::Probabilities(vote_soft(&probs, &self.weights))
                } else {
                    Prediction::Labels(vote_hard(&probs, &self.weights))
                })
            }
            VoteKind::RegressorMean => {
                let vals: Vec<Vec<f64>> = outs
                    .into_iter()
                    .map(|p| match p {
                        Prediction::Values(v) => v,
                        _ => unreachable!("regressor members return values"),
                    })
                    .collect();
                Ok(Prediction::Values(vote_regress(&vals, &self.weights)))
            }
        }
    }

    /// Container: member manifest (JSON) followed by each member's model file.
    pub fn to_bytes(&self) -> Vec<u8> {
        let files: Vec<Vec<u8>> = self.members.iter().map(save_model).collect();
        let manifest = ContainerManifest {
            vote: self.vote,
            weights: self.weights.clone(),
            members: self
                .members
                .iter()
                .zip(&files)
                .map(|(m, f)| MemberEntry { kind: m.kind(), bytes: f.len() as u64 })
                .collect(),
        };
        let head = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut payload = Vec::new();
        payload.extend_from_slice(&(head.len() as u64).to_le_bytes());
        payload.extend_from_slice(&head);
        files.iter().for_each(|f| payload.extend_from_slice(f));
        seal(ENSEMBLE_MAGIC, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnsembleError> {
        let payload = unseal(ENSEMBLE_MAGIC, bytes).map_err(EnsembleError::Container)?;
        let corrupt = |m: &str| EnsembleError::Corrupt(m.to_string());
        if payload.len() < 8 {
            return Err(corrupt("short payload"));
        }
        let head_len = u64::from_le_bytes(payload[..8].try_into().expect("8 bytes")) as usize;
        let rest = &payload[8..];
        if head_len > rest.len() {
            return Err(corrupt("manifest length out of range"));
        }
        let manifest: ContainerManifest =
            serde_json::from_slice(&rest[..head_len]).map_err(|e| EnsembleError::Corrupt(e.to_string()))?;
        let mut at = head_len;
        let mut members = Vec::with_capacity(manifest.members.len());
        for (index, entry) in manifest.members.iter().enumerate() {
            let end = at
                .checked_add(entry.bytes as usize)
                .filter(|&e| e <= rest.len())
                .ok_or_else(|| corrupt("member out of range"))?;
            let m = load_model(&rest[at..end]).map_err(|source| EnsembleError::Member { index, source })?;
            if m.kind() != entry.kind {
                return Err(corrupt("member kind does not match manifest"));
            }
            members.push(m);
            at = end;
        }
        if at != rest.len() {
            return Err(corrupt("trailing bytes after members"));
        }
        VotingEnsemble::new(members, manifest.vote, Some(manifest.weights))
    }
}

#[derive(Serialize, Deserialize)]
struct ContainerManifest {
    vote: VoteKind,
    weights: Vec<f64>,
    members: Vec<MemberEntry>,
}

#[derive(Serialize, Deserialize)]
struct MemberEntry {
    kind: ModelKind,
    bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// 14 features for each of CTD, SF and PF.
    #[serde(rename = "linguistic_42")]
    Linguistic42,
    /// Mean-pooled CTD recording embedding.
    EmbeddingCtd,
}

impl std::str::FromStr for FeatureSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linguistic_42" => Ok(FeatureSource::Linguistic42),
            "embedding_ctd" => Ok(FeatureSource::EmbeddingCtd),
            other => Err(format!("unknown feature source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSplit {
    Train,
    TrainDev,
}

/// Learners and how their outputs are combined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub vote: VoteKind,
    pub members: Vec<Hyperparams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl ModelSpec {
    pub fn task(&self) -> TaskKind {
        self.vote.task()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmissionConfig {
    pub name: String,
    pub features: FeatureSource,
    pub model: ModelSpec,
    pub train_split: TrainSplit,
    /// Tune each member over its default grid before the final fit.
    #[serde(default)]
    pub grid_search: bool,
}

impl SubmissionConfig {
    pub fn task(&self) -> TaskKind {
        self.model.task()
    }
}

pub const SUBMISSION_NAMES: [&str; 6] = ["cls1", "cls2", "cls3", "reg1", "reg2", "reg3"];

pub fn build_submission_config(name: &str) -> Result<SubmissionConfig, EnsembleError> {
    let rf = || Hyperparams::RandomForest(ForestParams::default());
    let ada = || Hyperparams::AdaBoost(AdaBoostParams::default());
    let gbm = || Hyperparams::GradientBoosting(GbmParams::default());
    let dnn = || Hyperparams::Dnn(DnnParams::default());
    let (features, vote, members, train_split) = match name {
        "cls1" => (FeatureSource::Linguistic42, VoteKind::Soft, vec![rf()], TrainSplit::TrainDev),
        "cls2" => (FeatureSource::EmbeddingCtd, VoteKind::Soft, vec![rf(), ada(), dnn()], TrainSplit::Train),
        "cls3" => (FeatureSource::EmbeddingCtd, VoteKind::Soft, vec![rf(), ada(), dnn()], TrainSplit::TrainDev),
        "reg1" => {
            (FeatureSource::Linguistic42, VoteKind::RegressorMean, vec![rf(), ada(), gbm()], TrainSplit::TrainDev)
        }
        "reg2" => (FeatureSource::EmbeddingCtd, VoteKind::RegressorMean, vec![rf(), ada(), gbm()], TrainSplit::Train),
        "reg3" => {
            (FeatureSource::EmbeddingCtd, VoteKind::RegressorMean, vec![rf(), ada(), gbm()], TrainSplit::TrainDev)
        }
        other => return Err(EnsembleError::UnknownConfigName(other.to_string())),
    };
    Ok(SubmissionConfig {
        name: name.to_string(),
        features,
        model: ModelSpec { vote, members, weights: None },
        train_split,
        grid_search: false,
    })
}

/// Fits every member on `d`; member `i` is seeded with `seed + i`.
pub fn fit_ensemble(spec: &ModelSpec, d: &Dataset, seed: u64) -> Result<VotingEnsemble, EnsembleError> {
    if spec.members.is_empty() {
        return Err(EnsembleError::NoMembers);
    }
    if d.kind() != spec.task() {
        return Err(EnsembleError::VoteKindMismatch { vote: spec.vote, task: d.kind() });
    }
    let members = spec
        .members
        .par_iter()
        .enumerate()
        .map(|(index, hp)| {
            let mut hp = hp.clone();
            hp.set_seed(seed.wrapping_add(index as u64));
            fit_model(&hp, d).map_err(|source| EnsembleError::Member { index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    VotingEnsemble::new(members, spec.vote, spec.weights.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HC: [f64; 3] = [1.0, 0.0, 0.0];
    const MCI: [f64; 3] = [0.0, 1.0, 0.0];

    #[test]
    fn soft_vote_examples() {
        assert_eq!(vote_soft(&[vec![[0.2, 0.3, 0.5]]], &[1.0]), vec![[0.2, 0.3, 0.5]]);
        let out = vote_soft(&[vec![HC], vec![MCI]], &[1.0, 1.0]);
        assert_eq!(out, vec![[0.5, 0.5, 0.0]]);
        assert_eq!(argmax(&out[0]), 0);
    }

    #[test]
    fn hard_vote_examples() {
        assert_eq!(vote_hard(&[vec![MCI], vec![MCI], vec![HC]], &[1.0; 3]), vec![1]);
        assert_eq!(vote_hard(&[vec![[0.2, 0.3, 0.5]]], &[1.0]), vec![2]);
    }

    #[test]
    fn hard_vote_tie_uses_soft_sums() {
        // one vote each; summed scores HC 1.2, MCI 1.5, AD 0.3. With rows that
        // sum to 1 these sums are unreachable, so raw scores are used here.
        let members = [vec![[0.7, 0.5, 0.0]], vec![[0.5, 1.0, 0.0]], vec![[0.0, 0.0, 0.3]]];
        assert_eq!(vote_hard(&members, &[1.0; 3]), vec![1]);
        // equal soft sums fall back to the class index
        let members = [vec![[0.6, 0.4, 0.0]], vec![[0.4, 0.6, 0.0]]];
        assert_eq!(vote_hard(&members, &[1.0; 2]), vec![0]);
        // weights decide the plurality before soft scores are consulted
        let members = [vec![[0.9, 0.1, 0.0]], vec![[0.4, 0.6, 0.0]]];
        assert_eq!(vote_hard(&members, &[1.0, 2.0]), vec![1]);
    }

    #[test]
    fn regress_examples() {
        assert_eq!(vote_regress(&[vec![26.0], vec![28.0], vec![30.0]], &[1.0; 3]), vec![28.0]);
        assert_eq!(vote_regress(&[vec![24.0], vec![28.0], vec![28.0]], &[2.0, 1.0, 1.0]), vec![26.0]);
        assert_eq!(vote_regress(&[vec![17.25]], &[3.0]), vec![17.25]);
        assert_eq!(vote_regress(&[vec![35.0]], &[1.0]), vec![30.0]);
    }

    #[test]
    fn configs() {
        let c = build_submission_config("cls1").unwrap();
        assert_eq!(c.features, FeatureSource::Linguistic42);
        assert_eq!(c.train_split, TrainSplit::TrainDev);
        assert_eq!(c.model.members.iter().map(Hyperparams::kind).collect::<Vec<_>>(), vec![ModelKind::RandomForest]);
        let c = build_submission_config("cls3").unwrap();
        assert_eq!(c.model.vote, VoteKind::Soft);
        assert_eq!(
            c.model.members.iter().map(Hyperparams::kind).collect::<Vec<_>>(),
            vec![ModelKind::RandomForest, ModelKind::AdaBoost, ModelKind::Dnn]
        );
        let c = build_submission_config("reg3").unwrap();
        assert_eq!(
            (c.features, c.train_split, c.model.vote),
            (FeatureSource::EmbeddingCtd, TrainSplit::TrainDev, VoteKind::RegressorMean)
        );
        assert_eq!(build_submission_config("cls4"), Err(EnsembleError::UnknownConfigName("cls4".into())));
    }
}
