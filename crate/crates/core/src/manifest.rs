//! Cohort manifest: one row per (participant, task) recording.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::transcript::{Diagnosis, Task};

pub const MANIFEST_HEADER: [&str; 7] =
    ["participant_id", "task", "transcript_path", "embedding_path", "duration_seconds", "diagnosis", "mmse"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub participant_id: String,
    pub task: Task,
    pub transcript_path: String,
    pub embedding_path: Option<String>,
    pub duration_seconds: f64,
    pub diagnosis: Option<Diagnosis>,
    pub mmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortManifest {
    pub rows: Vec<ManifestRow>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

#[derive(Debug, Error, PartialEq)]
pub enum ManifestError {
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("line {line}: duplicate row for participant {participant_id} task {task}")]
    DuplicateTaskRow { line: usize, participant_id: String, task: Task },
    #[error("line {line}: mmse {value} outside [0, 30]")]
    MmseOutOfRange { line: usize, value: String },
    #[error("line {line}: unknown diagnosis label {label:?}")]
    UnknownDiagnosisLabel { line: usize, label: String },
    #[error("line {line}: unknown task label {label:?}")]
    UnknownTaskLabel { line: usize, label: String },
    #[error("line {line}: invalid {field}: {value:?}")]
    InvalidField { line: usize, field: &'static str, value: String },
    #[error("malformed manifest: {0}")]
    Malformed(String),
}

impl CohortManifest {
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Participant ids in sorted order.
    pub fn participants(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.participant_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn rows_for<'a>(&'a self, participant_id: &'a str) -> impl Iterator<Item = &'a ManifestRow> + 'a {
        self.rows.iter().filter(move |r| r.participant_id == participant_id)
    }

    pub fn row(&self, participant_id: &str, task: Task) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.participant_id == participant_id && r.task == task)
    }

    /// First diagnosis recorded for a participant.
    pub fn diagnosis(&self, participant_id: &str) -> Option<Diagnosis> {
        self.rows_for(participant_id).find_map(|r| r.diagnosis)
    }

    pub fn mmse(&self, participant_id: &str) -> Option<f64> {
        self.rows_for(participant_id).find_map(|r| r.mmse)
    }

    /// Concatenates manifests. Fails if the same (participant, task) appears twice.
    pub fn merge(&self, other: &CohortManifest) -> Result<CohortManifest, ManifestError> {
        let mut seen: HashSet<(String, Task)> = self.rows.iter().map(|r| (r.participant_id.clone(), r.task)).collect();
        let mut rows = self.rows.clone();
        for (i, r) in other.rows.iter().enumerate() {
            if !seen.insert((r.participant_id.clone(), r.task)) {
                return Err(ManifestError::DuplicateTaskRow {
                    line: i + 2,
                    participant_id: r.participant_id.clone(),
                    task: r.task,
                });
            }
            let mut r = r.clone();
            // rebase relative paths so both halves resolve from one directory
            r.transcript_path = other.resolve(&r.transcript_path).to_string_lossy().into_owned();
            r.embedding_path = r.embedding_path.as_deref().map(|p| other.resolve(p).to_string_lossy().into_owned());
            rows.push(r);
        }
        Ok(CohortManifest { rows, base_dir: self.base_dir.clone() })
    }

    pub fn write<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(MANIFEST_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.participant_id.as_str(),
                r.task.as_str(),
                r.transcript_path.as_str(),
                r.embedding_path.as_deref().unwrap_or(""),
                &r.duration_seconds.to_string(),
                r.diagnosis.map(|d| d.as_str()).unwrap_or(""),
                &r.mmse.map(|m| m.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn parse_manifest<R: Read>(reader: R) -> Result<CohortManifest, ManifestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| ManifestError::Malformed(e.to_string()))?.clone();
    for (i, want) in MANIFEST_HEADER.iter().enumerate() {
        if header.get(i) != Some(*want) {
            return Err(ManifestError::MissingColumn(want.to_string()));
        }
    }
    if header.len() != MANIFEST_HEADER.len() {
        return Err(ManifestError::Malformed(format!(
            "header has {} columns, expected {}",
            header.len(),
            MANIFEST_HEADER.len()
        )));
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| ManifestError::Malformed(e.to_string()))?;
        if rec.len() < MANIFEST_HEADER.len() {
            return Err(ManifestError::MissingColumn(MANIFEST_HEADER[rec.len()].to_string()));
        }
        if rec.len() > MANIFEST_HEADER.len() {
            return Err(ManifestError::Malformed(format!("line {line}: too many fields")));
        }
        let participant_id = rec[0].to_string();
        if participant_id.is_empty() {
            return Err(ManifestError::InvalidField { line, field: "participant_id", value: String::new() });
        }
        let task: Task = rec[1].parse().map_err(|label| ManifestError::UnknownTaskLabel { line, label })?;
        let transcript_path = rec[2].to_string();
        let embedding_path = non_empty(&rec[3]);
        let duration_seconds: f64 = rec[4].parse().ok().filter(|d: &f64| d.is_finite()).ok_or_else(|| {
            ManifestError::InvalidField { line, field: "duration_seconds", value: rec[4].to_string() }
        })?;
        let diagnosis = match non_empty(&rec[5]) {
            None => None,
            Some(label) => Some(label.parse().map_err(|label| ManifestError::UnknownDiagnosisLabel { line, label })?),
        };
        let mmse = match non_empty(&rec[6]) {
            None => None,
            Some(v) => {
                let m: f64 = v
                    .parse()
                    .ok()
                    .filter(|m: &f64| !m.is_nan())
                    .ok_or_else(|| ManifestError::InvalidField { line, field: "mmse", value: v.clone() })?;
                if !(0.0..=30.0).contains(&m) {
                    return Err(ManifestError::MmseOutOfRange { line, value: v });
                }
                Some(m)
            }
        };
        if !seen.insert((participant_id.clone(), task)) {
            return Err(ManifestError::DuplicateTaskRow { line, participant_id, task });
        }
        rows.push(ManifestRow {
            participant_id,
            task,
            transcript_path,
            embedding_path,
            duration_seconds,
            diagnosis,
            mmse,
        });
    }
    Ok(CohortManifest { rows, base_dir: PathBuf::new() })
}

/// Reads a manifest from disk; relative paths resolve against its directory.
pub fn read_manifest(path: &Path) -> Result<CohortManifest, crate::Error> {
    let file = std::fs::File::open(path).map_err(|e| crate::Error::io(path, e))?;
    let mut m = parse_manifest(std::io::BufReader::new(file))?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(m)
}

fn non_empty(s: &str) -> Option<String> {
    if s.is_empty() {
        None
    } else {
        Some(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FindingKind {
    MissingTask { task: Task },
    MissingDiagnosis,
    MissingEmbedding { task: Task },
    NonPositiveDuration { task: Task },
    InconsistentLabels,
    MissingFile { path: String },
    UnreadableTranscript { task: Task, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub participant_id: String,
    #[serde(flatten)]
    pub kind: FindingKind,
    pub blocking: bool,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = if self.blocking { "error" } else { "warning" };
        write!(f, "{level}: participant {}: ", self.participant_id)?;
        match &self.kind {
            FindingKind::MissingTask { task } => write!(f, "missing task {task}"),
            FindingKind::MissingDiagnosis => write!(f, "missing diagnosis"),
            FindingKind::MissingEmbedding { task } => write!(f, "missing embedding for task {task}"),
            FindingKind::NonPositiveDuration { task } => write!(f, "non-positive duration for task {task}"),
            FindingKind::InconsistentLabels => write!(f, "rows disagree on diagnosis or mmse"),
            FindingKind::MissingFile { path } => write!(f, "missing file {path}"),
            FindingKind::UnreadableTranscript { task, error } => {
                write!(f, "transcript for task {task} does not parse: {error}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub mode: ValidationMode,
    pub participants: usize,
    /// Participants usable in this mode (regression keeps only MMSE-bearing ones).
    pub retained: usize,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn has_blocking(&self) -> bool {
        self.findings.iter().any(|f| f.blocking)
    }
}

/// Structural checks that need no filesystem access.
pub fn validate_cohort(manifest: &CohortManifest, mode: ValidationMode) -> ValidationReport {
    let participants = manifest.participants();
    let tasks_with_embeddings: BTreeSet<Task> =
        manifest.rows.iter().filter(|r| r.embedding_path.is_some()).map(|r| r.task).collect();

    let mut retained = 0;
    let mut findings = Vec::new();
    for pid in &participants {
        let in_scope = match mode {
            ValidationMode::Classification => true,
            ValidationMode::Regression => manifest.mmse(pid).is_some(),
        };
        if !in_scope {
            continue;
        }
        retained += 1;
        let mut push = |kind, blocking| findings.push(Finding { participant_id: pid.clone(), kind, blocking });

        let rows: BTreeMap<Task, &ManifestRow> = manifest.rows_for(pid).map(|r| (r.task, r)).collect();
        for task in Task::ALL {
            match rows.get(&task) {
                None => push(FindingKind::MissingTask { task }, false),
                Some(r) => {
                    if r.duration_seconds <= 0.0 {
                        push(FindingKind::NonPositiveDuration { task }, true);
                    }
                    if tasks_with_embeddings.contains(&task) && r.embedding_path.is_none() {
                        push(FindingKind::MissingEmbedding { task }, false);
                    }
                }
            }
        }
        if mode == ValidationMode::Classification && manifest.diagnosis(pid).is_none() {
            push(FindingKind::MissingDiagnosis, true);
        }
        let labels: BTreeSet<Option<Diagnosis>> =
            rows.values().filter(|r| r.diagnosis.is_some()).map(|r| r.diagnosis).collect();
        let scores: Vec<u64> = rows.values().filter_map(|r| r.mmse.map(f64::to_bits)).collect();
        let scores_agree = scores.windows(2).all(|w| w[0] == w[1]);
        if labels.len() > 1 || !scores_agree {
            push(FindingKind::InconsistentLabels, true);
        }
    }
    ValidationReport { mode, participants: participants.len(), retained, findings }
}

/// Checks that referenced files exist and transcripts parse.
pub fn check_files(manifest: &CohortManifest, fillers: &crate::features::FillerLexicon) -> Vec<Finding> {
    let mut findings = Vec::new();
    for r in &manifest.rows {
        let transcript = manifest.resolve(&r.transcript_path);
        if !transcript.is_file() {
            findings.push(Finding {
                participant_id: r.participant_id.clone(),
                kind: FindingKind::MissingFile { path: transcript.display().to_string() },
                blocking: true,
            });
        } else if r.duration_seconds > 0.0 {
            let parsed = std::fs::File::open(&transcript).map_err(|e| e.to_string()).and_then(|f| {
                crate::transcript::parse_transcript_with(
                    std::io::BufReader::new(f),
                    &r.participant_id,
                    r.task,
                    r.duration_seconds,
                    fillers,
                )
                .map_err(|e| e.to_string())
            });
            if let Err(error) = parsed {
                findings.push(Finding {
                    participant_id: r.participant_id.clone(),
                    kind: FindingKind::UnreadableTranscript { task: r.task, error },
                    blocking: true,
                });
            }
        }
        if let Some(e) = &r.embedding_path {
            let p = manifest.resolve(e);
            if !p.is_file() {
                findings.push(Finding {
                    participant_id: r.participant_id.clone(),
                    kind: FindingKind::MissingFile { path: p.display().to_string() },
                    blocking: true,
                });
            }
        }
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "participant_id,task,transcript_path,embedding_path,duration_seconds,diagnosis,mmse\n";

    fn parse(body: &str) -> Result<CohortManifest, ManifestError> {
        parse_manifest(format!("{HEADER}{body}").as_bytes())
    }

    #[test]
    fn one_complete_participant() {
        let m = parse(
            "p1,CTD,p1_ctd.conllu,p1_ctd.emb,61.5,HC,29\np1,SF,p1_sf.conllu,,60,HC,29\np1,PF,p1_pf.conllu,,60,HC,29\n",
        )
        .unwrap();
        assert_eq!(m.rows.len(), 3);
        assert_eq!(m.participants(), vec!["p1".to_string()]);
        assert_eq!(m.rows[0].embedding_path.as_deref(), Some("p1_ctd.emb"));
        assert_eq!(m.rows[1].embedding_path, None);
        assert_eq!(m.mmse("p1"), Some(29.0));
    }

    #[test]
    fn duplicate_task_row() {
        let err = parse("p1,CTD,a,,60,HC,\np1,CTD,b,,60,HC,\n").unwrap_err();
        assert!(matches!(err, ManifestError::DuplicateTaskRow { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn mmse_out_of_range() {
        let err = parse("p1,CTD,a,,60,HC,31\n").unwrap_err();
        assert!(matches!(err, ManifestError::MmseOutOfRange { .. }));
        let err = parse("p1,CTD,a,,60,HC,-1\n").unwrap_err();
        assert!(matches!(err, ManifestError::MmseOutOfRange { .. }));
    }

    #[test]
    fn bad_labels() {
        assert!(matches!(parse("p1,XX,a,,60,HC,\n"), Err(ManifestError::UnknownTaskLabel { .. })));
        assert!(matches!(parse("p1,CTD,a,,60,Dementia,\n"), Err(ManifestError::UnknownDiagnosisLabel { .. })));
    }

    #[test]
    fn header_must_match() {
        let err = parse_manifest("participant_id,task,transcript_path\np1,CTD,a\n".as_bytes()).unwrap_err();
        assert_eq!(err, ManifestError::MissingColumn("embedding_path".into()));
        let err = parse("p1,CTD,a,,60\n").unwrap_err();
        assert_eq!(err, ManifestError::MissingColumn("diagnosis".into()));
    }

    fn full_participant(id: &str, dx: &str, mmse: &str) -> String {
        Task::ALL.iter().map(|t| format!("{id},{t},{id}_{t}.conllu,,60,{dx},{mmse}\n")).collect()
    }

    #[test]
    fn classification_all_labeled_has_no_findings() {
        let body = full_participant("a", "HC", "") + &full_participant("b", "AD", "21");
        let m = parse(&body).unwrap();
        let report = validate_cohort(&m, ValidationMode::Classification);
        assert!(report.findings.is_empty(), "{:?}", report.findings);
        assert_eq!(report.retained, 2);
    }

    #[test]
    fn missing_task_reported() {
        let m = parse("a,CTD,x,,60,HC,\na,PF,y,,60,HC,\n").unwrap();
        let report = validate_cohort(&m, ValidationMode::Classification);
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.findings[0].to_string(), "warning: participant a: missing task SF");
        assert!(!report.has_blocking());
    }

    #[test]
    fn regression_filters_to_mmse_bearing() {
        let body =
            full_participant("a", "HC", "28") + &full_participant("b", "MCI", "") + &full_participant("c", "", "25");
        let m = parse(&body).unwrap();
        let report = validate_cohort(&m, ValidationMode::Regression);
        assert_eq!(report.participants, 3);
        assert_eq!(report.retained, 2);
        assert!(report.findings.is_empty());
        let cls = validate_cohort(&m, ValidationMode::Classification);
        assert!(cls.has_blocking());
    }

    #[test]
    fn write_and_reparse() {
        let body = full_participant("a", "HC", "28.5") + &full_participant("b", "", "");
        let m = parse(&body).unwrap();
        let mut out = Vec::new();
        m.write(&mut out).unwrap();
        assert_eq!(parse_manifest(out.as_slice()).unwrap(), m);
    }
}
