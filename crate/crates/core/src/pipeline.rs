//! End-to-end runs: manifest to feature table, dataset, cross-validation,
//! final fit, predictions file and JSON report.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{join_embeddings, PoolingMethod, DEFAULT_EMBEDDING_DIM};
use crate::ensemble::{fit_ensemble, FeatureSource, ModelSpec, SubmissionConfig, TrainSplit, VotingEnsemble};
use crate::eval::{cross_validate, grid_search, make_folds, FoldResult, Grid, GridResult, Metrics};
use crate::features::{
    assemble_participant_vector, feature_column_names, transcript_features, CountingRules, FeatureError, FeatureTable,
    MissingTaskPolicy, TaskFeatureVector, TASK_FEATURES,
};
use crate::learners::{Dataset, FeatureMatrix, Matrix, ModelKind, Prediction, Targets, TaskKind};
use crate::manifest::CohortManifest;
use crate::transcript::{parse_transcript_with, Diagnosis, Task};
use crate::{Error, Result};

/// Knobs shared by every stage of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineOptions {
    pub seed: u64,
    pub k: usize,
    pub rules: CountingRules,
    pub missing_task_policy: MissingTaskPolicy,
    pub embedding_dim: usize,
    /// Search spaces used when tuning; kinds not listed use their default grid.
    pub grids: BTreeMap<ModelKind, Grid>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            seed: 0,
            k: 5,
            rules: CountingRules::default(),
            missing_task_policy: MissingTaskPolicy::default(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            grids: BTreeMap::new(),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn task_vector(m: &CohortManifest, pid: &str, task: Task, opts: &PipelineOptions) -> Result<Option<TaskFeatureVector>> {
    let Some(row) = m.row(pid, task) else { return Ok(None) };
    let path = m.resolve(&row.transcript_path);
    let bytes = read_file(&path)?;
    let t = parse_transcript_with(&bytes[..], pid, task, row.duration_seconds, &opts.rules.fillers)?;
    Ok(Some(transcript_features(&t, &opts.rules)?))
}

/// Per-participant linguistic features for `tasks`, in participant order.
/// Returns the table and warnings about zero-filled tasks and zero
/// denominators.
pub fn linguistic_table(
    m: &CohortManifest,
    tasks: &[Task],
    opts: &PipelineOptions,
) -> Result<(FeatureTable, Vec<String>)> {
    let participants = m.participants();
    let rows = participants
        .par_iter()
        .map(|pid| {
            let mut per_task = BTreeMap::new();
            for &task in tasks {
                if let Some(v) = task_vector(m, pid, task, opts)? {
                    per_task.insert(task, v);
                }
            }
            let mut warnings: Vec<String> = per_task
                .values()
                .filter(|v| v.zero_denominators() > 0)
                .map(|v| format!("participant {pid}: {} zero denominators in {}", v.zero_denominators(), v.task()))
                .collect();
            let values = if tasks == Task::ALL {
                let v = assemble_participant_vector(pid, &per_task, opts.missing_task_policy)?;
                warnings.extend(v.filled_tasks.iter().map(|t| format!("participant {pid}: task {t} zero-filled")));
                v.values().to_vec()
            } else {
                let mut values = Vec::with_capacity(tasks.len() * TASK_FEATURES);
                for &task in tasks {
                    match (per_task.get(&task), opts.missing_task_policy) {
                        (Some(v), _) => values.extend_from_slice(v.values()),
                        (None, MissingTaskPolicy::ZeroFill) => {
                            warnings.push(format!("participant {pid}: task {task} zero-filled"));
                            values.extend_from_slice(&[0.0; TASK_FEATURES]);
                        }
                        (None, MissingTaskPolicy::Reject) => return Err(FeatureError::MissingTask(task).into()),
                    }
                }
                values
            };
            Ok(((pid.clone(), values), warnings))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = FeatureTable { columns: feature_column_names(tasks), rows: Vec::with_capacity(rows.len()) };
    let mut warnings = Vec::new();
    for (row, w) in rows {
        table.rows.push(row);
        warnings.extend(w);
    }
    Ok((table, warnings))
}

/// Mean-pooled CTD embeddings; participants without one are left out with a warning.
pub fn embedding_table(m: &CohortManifest, opts: &PipelineOptions) -> (FeatureTable, Vec<String>) {
    let joined = join_embeddings(m, Task::Ctd, opts.embedding_dim, PoolingMethod::Mean);
    let columns = (0..opts.embedding_dim).map(|j| format!("CTD__emb_{j:04}")).collect();
    let rows = joined.vectors.into_iter().map(|v| (v.participant_id, v.values)).collect();
    let warnings = joined.missing.iter().map(|(pid, e)| format!("participant {pid}: no embedding: {e}")).collect();
    (FeatureTable { columns, rows }, warnings)
}

pub fn feature_table(
    source: FeatureSource,
    m: &CohortManifest,
    opts: &PipelineOptions,
) -> Result<(FeatureTable, Vec<String>)> {
    match source {
        FeatureSource::Linguistic42 => linguistic_table(m, &Task::ALL, opts),
        FeatureSource::EmbeddingCtd => Ok(embedding_table(m, opts)),
    }
}

pub fn feature_matrix(table: &FeatureTable) -> Result<FeatureMatrix> {
    let ids = table.rows.iter().map(|(id, _)| id.clone()).collect();
    let rows: Vec<Vec<f64>> = table.rows.iter().map(|(_, v)| v.clone()).collect();
    let x = if rows.is_empty() { Matrix::new(0, table.columns.len(), Vec::new()) } else { Matrix::from_rows(&rows) };
    Ok(FeatureMatrix::new(ids, table.columns.clone(), x)?)
}

/// Rows of `table` whose participant carries a label for `task`.
pub fn labelled_dataset(table: &FeatureTable, m: &CohortManifest, task: TaskKind) -> Result<Dataset> {
    let mut keep = Vec::new();
    let mut classes = Vec::new();
    let mut values = Vec::new();
    for (i, (pid, _)) in table.rows.iter().enumerate() {
        match task {
            TaskKind::Classification => {
                if let Some(d) = m.diagnosis(pid) {
                    keep.push(i);
                    classes.push(d.index());
                }
            }
            TaskKind::Regression => {
                if let Some(v) = m.mmse(pid) {
                    keep.push(i);
                    values.push(v);
                }
            }
        }
    }
    let fm = feature_matrix(table)?.select(&keep);
    let targets = match task {
        TaskKind::Classification => Targets::Classes(classes),
        TaskKind::Regression => Targets::Values(values),
    };
    Ok(Dataset::new(fm, targets)?)
}

/// Writes `participant_id,prediction` rows: class names or MMSE values.
pub fn write_predictions<W: Write>(ids: &[String], pred: &Prediction, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let io = |e: csv::Error| Error::Io { path: "predictions".into(), message: e.to_string() };
    out.write_record(["participant_id", "prediction"]).map_err(io)?;
    let cells: Vec<String> = match pred {
        Prediction::Values(v) => v.iter().map(|x| x.to_string()).collect(),
        p => p
            .labels()
            .expect("classification output")
            .into_iter()
            .map(|c| Diagnosis::from_index(c).expect("class index").as_str().to_string())
            .collect(),
    };
    for (id, c) in ids.iter().zip(cells) {
        out.write_record([id.as_str(), c.as_str()]).map_err(io)?;
    }
    out.flush().map_err(|e| Error::Io { path: "predictions".into(), message: e.to_string() })
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictedValue {
    Class(Diagnosis),
    Mmse(f64),
}

pub fn read_predictions<R: Read>(r: R) -> Result<Vec<(String, PredictedValue)>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let bad = |m: String| Error::Validation(format!("predictions file: {m}"));
    let header = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["participant_id", "prediction"] {
        return Err(bad("header must be participant_id,prediction".into()));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let cell = &rec[1];
        let v = match cell.parse::<Diagnosis>() {
            Ok(d) => PredictedValue::Class(d),
            Err(_) => PredictedValue::Mmse(cell.parse::<f64>().map_err(|_| bad(format!("bad prediction {cell:?}")))?),
        };
        out.push((rec[0].to_string(), v));
    }
    Ok(out)
}

/// Scores a predictions file against manifest ground truth. Participants
/// without a label for the prediction type are skipped.
pub fn evaluate_predictions(preds: &[(String, PredictedValue)], m: &CohortManifest) -> Result<Metrics> {
    let mut t_cls = Vec::new();
    let mut p_cls = Vec::new();
    let mut t_val = Vec::new();
    let mut p_val = Vec::new();
    for (pid, v) in preds {
        match v {
            PredictedValue::Class(d) => {
                if let Some(t) = m.diagnosis(pid) {
                    t_cls.push(t.index());
                    p_cls.push(d.index());
                }
            }
            PredictedValue::Mmse(x) => {
                if let Some(t) = m.mmse(pid) {
                    t_val.push(t);
                    p_val.push(*x);
                }
            }
        }
    }
    if !t_cls.is_empty() && !t_val.is_empty() {
        return Err(Error::Validation("predictions file mixes labels and values".into()));
    }
    if t_val.is_empty() {
        Ok(Metrics::Classification(crate::eval::macro_metrics(&t_cls, &p_cls)?))
    } else {
        Ok(Metrics::Regression { rmse: crate::eval::rmse(&t_val, &p_val)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: String,
    pub config_fingerprint: String,
    pub task: TaskKind,
    pub features: FeatureSource,
    pub seed: u64,
    pub k: usize,
    pub n_train: usize,
    pub train_fingerprint: String,
    pub members: Vec<crate::learners::Hyperparams>,
    pub folds: Vec<FoldResult>,
    /// Mean of per-fold macro F1 (classification) or RMSE (regression).
    pub cv_mean: f64,
    /// Metrics over the pooled out-of-fold predictions.
    pub cv_pooled: Metrics,
    pub n_eval: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<Metrics>,
    pub predictions: String,
    pub warnings: Vec<String>,
}

pub fn config_fingerprint(cfg: &SubmissionConfig, opts: &PipelineOptions) -> String {
    let bytes = serde_json::to_vec(&(cfg, opts)).expect("config serializes");
    hex::encode(&Sha256::digest(&bytes)[..16])
}

impl PipelineOptions {
    pub fn grid_for(&self, kind: ModelKind) -> Grid {
        self.grids.get(&kind).cloned().unwrap_or_else(|| kind.default_grid())
    }
}

/// Tunes every member over its grid on `d`. Returns the spec with the
/// winning hyperparameters and each member's results table.
pub fn tune_members(spec: &ModelSpec, d: &Dataset, opts: &PipelineOptions) -> Result<(ModelSpec, Vec<GridResult>)> {
    let plan = make_folds(&d.targets, opts.k, opts.seed, true)?;
    let mut tuned = spec.clone();
    let mut tables = Vec::new();
    for hp in tuned.members.iter_mut() {
        let res = grid_search(d, hp, &opts.grid_for(hp.kind()), &plan, opts.seed)?;
        *hp = res.best.clone();
        tables.push(res);
    }
    Ok((tuned, tables))
}

pub struct PipelineOutput {
    pub report: EvalReport,
    pub model: VotingEnsemble,
}

/// Cross-validates on the training split, fits the final model, predicts the
/// evaluation manifest (or writes out-of-fold predictions when there is
/// none) and writes `model.cvxe`, `predictions.csv` and `report.json` into
/// `out_dir`.
pub fn run_pipeline(
    cfg: &SubmissionConfig,
    opts: &PipelineOptions,
    train: &CohortManifest,
    dev: Option<&CohortManifest>,
    test: Option<&CohortManifest>,
    out_dir: &Path,
) -> Result<PipelineOutput> {
    let task = cfg.task();
    let training = match (cfg.train_split, dev) {
        (TrainSplit::TrainDev, Some(dev)) => train.merge(dev)?,
        _ => train.clone(),
    };
    let evaluation = match (test, cfg.train_split) {
        (Some(t), _) => Some(t),
        (None, TrainSplit::Train) => dev,
        (None, TrainSplit::TrainDev) => None,
    };

    let (table, mut warnings) = feature_table(cfg.features, &training, opts)?;
    let d = labelled_dataset(&table, &training, task)?;
    let spec = if cfg.grid_search { tune_members(&cfg.model, &d, opts)?.0 } else { cfg.model.clone() };

    let plan = make_folds(&d.targets, opts.k, opts.seed, true)?;
    warnings.extend(plan.warnings.iter().cloned());
    let cv = cross_validate(&d, &spec, &plan, opts.seed)?;
    let cv_pooled = Metrics::compute(&d.targets, &cv.oof)?;

    let model = fit_ensemble(&spec, &d, opts.seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let model_path = out_dir.join("model.cvxe");
    fs::write(&model_path, model.to_bytes()).map_err(|e| Error::io(&model_path, e))?;

    let (ids, pred, eval, n_eval, source) = match evaluation {
        Some(em) => {
            let (t, w) = feature_table(cfg.features, em, opts)?;
            warnings.extend(w);
            let x = feature_matrix(&t)?;
            let pred = model.predict(&x)?;
            let labelled = labelled_dataset(&t, em, task).ok();
            let eval = match labelled {
                Some(ld) if ld.len() == x.len() => Some(Metrics::compute(&ld.targets, &model.predict(&ld.features)?)?),
                _ => None,
            };
            (x.ids, pred, eval, t.rows.len(), "evaluation")
        }
        None => (d.features.ids.clone(), cv.oof.clone(), None, 0, "cross_validation_out_of_fold"),
    };
    let pred_path = out_dir.join("predictions.csv");
    let f = fs::File::create(&pred_path).map_err(|e| Error::io(&pred_path, e))?;
    write_predictions(&ids, &pred, std::io::BufWriter::new(f))?;

    let report = EvalReport {
        config: cfg.name.clone(),
        config_fingerprint: config_fingerprint(cfg, opts),
        task,
        features: cfg.features,
        seed: opts.seed,
        k: opts.k,
        n_train: d.len(),
        train_fingerprint: d.fingerprint(),
        members: spec.members.clone(),
        folds: cv.folds,
        cv_mean: cv.mean_score,
        cv_pooled,
        n_eval,
        eval,
        predictions: source.to_string(),
        warnings,
    };
    let report_path = out_dir.join("report.json");
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    Ok(PipelineOutput { report, model })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let mut buf = Vec::new();
        write_predictions(&ids, &Prediction::Labels(vec![2, 0]), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "participant_id,prediction\na,AD\nb,HC\n");
        let back = read_predictions(&buf[..]).unwrap();
        assert_eq!(back[0], ("a".to_string(), PredictedValue::Class(Diagnosis::Ad)));

        let mut buf = Vec::new();
        write_predictions(&ids, &Prediction::Values(vec![27.5, 0.1 + 0.2]), &mut buf).unwrap();
        let back = read_predictions(&buf[..]).unwrap();
        assert_eq!(back[1].1, PredictedValue::Mmse(0.1 + 0.2));
    }
}
