//! Linguistic counts and the 14 per-task features.
//!
//! Thirteen features are ratios or per-second rates over twelve raw counts;
//! the fourteenth is the speech duration itself. Per-task vectors are
//! concatenated in CTD, SF, PF order into a 42-column participant vector.
//!
//! Counting rules:
//!
//! * pronouns: `PRON` tokens that are not fillers.
//! * noun phrases: one per `NOUN`/`PROPN` token, skipping nominals attached as
//!   `compound`/`flat`/`fixed` (they are part of another phrase). A phrase is
//!   definite if it has a `det` dependent with a definite lemma, is a proper
//!   noun, or has a possessive dependent; otherwise indefinite.
//! * total words: tokens other than `PUNCT` (fillers included by default);
//!   actual words exclude fillers.
//! * adverbial adjuncts: `advmod`/`advcl` dependents of a verbal head.
//! * sentences: blocks ending in `.`/`!`/`?` versus all blocks.
//! * clauses: minimal counts heads with an explicit subject plus a verbal
//!   root; comprehensive adds `ccomp`, `xcomp`, `advcl`, `acl`, `acl:relcl`,
//!   `csubj` heads and `conj` dependents of verbal heads. Adjunct clauses are
//!   `advcl` tokens.
//!
//! A ratio with a zero denominator is 0.0 and bumps a warning counter.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transcript::{AnnotatedSentence, AnnotatedTranscript, Task, Upos};

pub const FEATURE_NAMES: [&str; 14] = [
    "duration",
    "pronoun_ratio",
    "percent_definite",
    "percent_indefinite",
    "total_np_rate",
    "filler_word_rate",
    "total_word_count_rate",
    "active_interaction",
    "adverbial_adjunct_ratio_punct",
    "adverbial_adjunct_ratio_sentstruct",
    "total_clause_rate_minimal",
    "total_clause_rate_comprehensive",
    "adjunct_clause_ratio_minimal",
    "adjunct_clause_ratio_comprehensive",
];

pub const TASK_FEATURES: usize = FEATURE_NAMES.len();
pub const PARTICIPANT_FEATURES: usize = TASK_FEATURES * 3;

/// Positions in [`FEATURE_NAMES`] that are bounded to [0, 1].
const UNIT_BOUNDED: [usize; 5] = [1, 2, 3, 7, 13];

/// Case-insensitive set of filler surface forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FillerLexicon(BTreeSet<String>);

impl Default for FillerLexicon {
    fn default() -> Self {
        Self::new(["um", "uh", "er", "ah", "erm", "hm", "hmm", "mm", "uhm"])
    }
}

impl FillerLexicon {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        FillerLexicon(words.into_iter().map(|w| w.as_ref().to_lowercase()).collect())
    }

    pub fn contains(&self, form: &str) -> bool {
        self.0.contains(&form.to_lowercase())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

/// Tunable parts of the counting rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountingRules {
    pub fillers: FillerLexicon,
    pub definite_lemmas: BTreeSet<String>,
    pub possessive_relations: BTreeSet<String>,
    pub include_fillers_in_total: bool,
    /// Maps parser-specific relation labels onto Universal Dependencies names
    /// (for example `nsubjpass` to `nsubj:pass`). Unmapped labels pass through.
    pub relation_mapping: BTreeMap<String, String>,
}

impl Default for CountingRules {
    fn default() -> Self {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        CountingRules {
            fillers: FillerLexicon::default(),
            definite_lemmas: set(&["the", "this", "that", "these", "those"]),
            possessive_relations: set(&["nmod:poss", "poss"]),
            include_fillers_in_total: true,
            relation_mapping: BTreeMap::new(),
        }
    }
}

impl CountingRules {
    fn rel<'a>(&'a self, deprel: &'a str) -> &'a str {
        self.relation_mapping.get(deprel).map(String::as_str).unwrap_or(deprel)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinguisticCounts {
    pub pronoun_count: u64,
    pub definite_np_count: u64,
    pub indefinite_np_count: u64,
    pub filler_word_count: u64,
    pub total_word_count: u64,
    pub actual_word_count: u64,
    pub adverbial_adjunct_count: u64,
    pub total_sentence_count_punct: u64,
    pub total_sentence_count_sentstruct: u64,
    pub total_clause_count_minimal: u64,
    pub total_clause_count_comprehensive: u64,
    pub adjunct_clause_count: u64,
}

impl std::ops::Add for LinguisticCounts {
    type Output = LinguisticCounts;

    fn add(self, o: LinguisticCounts) -> LinguisticCounts {
        LinguisticCounts {
            pronoun_count: self.pronoun_count + o.pronoun_count,
            definite_np_count: self.definite_np_count + o.definite_np_count,
            indefinite_np_count: self.indefinite_np_count + o.indefinite_np_count,
            filler_word_count: self.filler_word_count + o.filler_word_count,
            total_word_count: self.total_word_count + o.total_word_count,
            actual_word_count: self.actual_word_count + o.actual_word_count,
            adverbial_adjunct_count: self.adverbial_adjunct_count + o.adverbial_adjunct_count,
            total_sentence_count_punct: self.total_sentence_count_punct + o.total_sentence_count_punct,
            total_sentence_count_sentstruct: self.total_sentence_count_sentstruct + o.total_sentence_count_sentstruct,
            total_clause_count_minimal: self.total_clause_count_minimal + o.total_clause_count_minimal,
            total_clause_count_comprehensive: self.total_clause_count_comprehensive
                + o.total_clause_count_comprehensive,
            adjunct_clause_count: self.adjunct_clause_count + o.adjunct_clause_count,
        }
    }
}

const SUBJECT_RELATIONS: [&str; 4] = ["nsubj", "nsubj:pass", "csubj", "expl"];
const CLAUSAL_RELATIONS: [&str; 6] = ["ccomp", "xcomp", "advcl", "acl", "acl:relcl", "csubj"];
const NP_PART_RELATIONS: [&str; 4] = ["compound", "flat", "flat:name", "fixed"];

pub fn extract_counts(t: &AnnotatedTranscript, rules: &CountingRules) -> LinguisticCounts {
    t.sentences.iter().map(|s| sentence_counts(s, rules)).fold(LinguisticCounts::default(), |a, b| a + b)
}

fn sentence_counts(s: &AnnotatedSentence, rules: &CountingRules) -> LinguisticCounts {
    let mut c = LinguisticCounts {
        total_sentence_count_sentstruct: 1,
        total_sentence_count_punct: s.ends_with_terminal_punct as u64,
        ..Default::default()
    };
    let head_is_verbal = |tok: &crate::transcript::AnnotatedToken| s.head_of(tok).is_some_and(|h| h.upos.is_verbal());

    let mut minimal = BTreeSet::new();
    let mut comprehensive = BTreeSet::new();

    for tok in &s.tokens {
        let rel = rules.rel(&tok.deprel);

        if tok.is_filler {
            c.filler_word_count += 1;
        }
        if tok.upos != Upos::PUNCT && (rules.include_fillers_in_total || !tok.is_filler) {
            c.total_word_count += 1;
            if !tok.is_filler {
                c.actual_word_count += 1;
            }
        }
        if tok.upos == Upos::PRON && !tok.is_filler {
            c.pronoun_count += 1;
        }
        if tok.upos.is_nominal() && !NP_PART_RELATIONS.contains(&rel) {
            let definite = tok.upos == Upos::PROPN
                || s.dependents(tok.index).any(|d| {
                    let drel = rules.rel(&d.deprel);
                    (drel == "det" && rules.definite_lemmas.contains(&d.lemma.to_lowercase()))
                        || rules.possessive_relations.contains(drel)
                });
            if definite {
                c.definite_np_count += 1;
            } else {
                c.indefinite_np_count += 1;
            }
        }
        if (rel == "advmod" || rel == "advcl") && head_is_verbal(tok) {
            c.adverbial_adjunct_count += 1;
        }
        if rel == "advcl" {
            c.adjunct_clause_count += 1;
        }

        // clause heads
        let has_subject = s.dependents(tok.index).any(|d| SUBJECT_RELATIONS.contains(&rules.rel(&d.deprel)));
        if has_subject || (tok.head == 0 && tok.upos.is_verbal()) {
            minimal.insert(tok.index);
            comprehensive.insert(tok.index);
        }
        if CLAUSAL_RELATIONS.contains(&rel) || (rel == "conj" && head_is_verbal(tok)) {
            comprehensive.insert(tok.index);
        }
    }
    c.total_clause_count_minimal = minimal.len() as u64;
    c.total_clause_count_comprehensive = comprehensive.len() as u64;
    c
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("duration must be positive and finite, got {0}")]
    NonPositiveDuration(f64),
    #[error("feature {name} is not finite: {value}")]
    NonFinite { name: String, value: f64 },
    #[error("feature {name} = {value} outside [0, 1]")]
    OutOfUnitRange { name: String, value: f64 },
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("no task vectors supplied")]
    AllTasksMissing,
    #[error("task {0} missing and policy forbids filling")]
    MissingTask(Task),
    #[error("feature table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFeatureVector {
    task: Task,
    values: [f64; TASK_FEATURES],
    /// Number of ratios that hit a zero denominator.
    zero_denominators: u32,
}

impl TaskFeatureVector {
    /// Validates finiteness and the unit bounds of the ratio features.
    pub fn new(task: Task, values: [f64; TASK_FEATURES]) -> Result<Self, FeatureError> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(FeatureError::NonFinite { name: FEATURE_NAMES[i].into(), value: v });
            }
            if UNIT_BOUNDED.contains(&i) && !(0.0..=1.0).contains(&v) {
                return Err(FeatureError::OutOfUnitRange { name: FEATURE_NAMES[i].into(), value: v });
            }
        }
        Ok(TaskFeatureVector { task, values, zero_denominators: 0 })
    }

    pub fn zeros(task: Task) -> Self {
        TaskFeatureVector { task, values: [0.0; TASK_FEATURES], zero_denominators: 0 }
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn values(&self) -> &[f64; TASK_FEATURES] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    pub fn zero_denominators(&self) -> u32 {
        self.zero_denominators
    }
}

/// Evaluates the thirteen ratio/rate formulas plus duration.
pub fn compute_features(
    task: Task,
    c: &LinguisticCounts,
    duration_seconds: f64,
) -> Result<TaskFeatureVector, FeatureError> {
    if !(duration_seconds > 0.0 && duration_seconds.is_finite()) {
        return Err(FeatureError::NonPositiveDuration(duration_seconds));
    }
    let mut zero_denominators = 0u32;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            zero_denominators += 1;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let rate = |num: u64| num as f64 / duration_seconds;

    let np_total = c.pronoun_count + c.definite_np_count + c.indefinite_np_count;
    let values = [
        duration_seconds,
        ratio(c.pronoun_count, np_total),
        ratio(c.definite_np_count, np_total),
        ratio(c.indefinite_np_count, np_total),
        rate(np_total),
        rate(c.filler_word_count),
        rate(c.total_word_count),
        ratio(c.actual_word_count, c.total_word_count),
        ratio(c.adverbial_adjunct_count, c.total_sentence_count_punct),
        ratio(c.adverbial_adjunct_count, c.total_sentence_count_sentstruct),
        rate(c.total_clause_count_minimal),
        rate(c.total_clause_count_comprehensive),
        ratio(c.adjunct_clause_count, c.total_clause_count_minimal),
        ratio(c.adjunct_clause_count, c.total_clause_count_comprehensive),
    ];
    let mut v = TaskFeatureVector::new(task, values)?;
    v.zero_denominators = zero_denominators;
    Ok(v)
}

/// Counts then features for one transcript.
pub fn transcript_features(t: &AnnotatedTranscript, rules: &CountingRules) -> Result<TaskFeatureVector, FeatureError> {
    compute_features(t.task, &extract_counts(t, rules), t.duration_seconds)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingTaskPolicy {
    /// Fill the task block with zeros and record a warning.
    #[default]
    ZeroFill,
    Reject,
}

pub fn feature_column_names(tasks: &[Task]) -> Vec<String> {
    tasks.iter().flat_map(|t| FEATURE_NAMES.iter().map(move |f| format!("{t}__{f}"))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantFeatureVector {
    pub participant_id: String,
    values: Vec<f64>,
    /// Tasks that were zero-filled.
    pub filled_tasks: Vec<Task>,
}

impl ParticipantFeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column_names() -> Vec<String> {
        feature_column_names(&Task::ALL)
    }
}

pub fn assemble_participant_vector(
    participant_id: &str,
    per_task: &BTreeMap<Task, TaskFeatureVector>,
    policy: MissingTaskPolicy,
) -> Result<ParticipantFeatureVector, FeatureError> {
    if per_task.is_empty() {
        return Err(FeatureError::AllTasksMissing);
    }
    let mut values = Vec::with_capacity(PARTICIPANT_FEATURES);
    let mut filled_tasks = Vec::new();
    for task in Task::ALL {
        match per_task.get(&task) {
            Some(v) => values.extend_from_slice(&v.values),
            None => match policy {
                MissingTaskPolicy::ZeroFill => {
                    filled_tasks.push(task);
                    values.extend_from_slice(&[0.0; TASK_FEATURES]);
                }
                MissingTaskPolicy::Reject => return Err(FeatureError::MissingTask(task)),
            },
        }
    }
    Ok(ParticipantFeatureVector { participant_id: participant_id.to_string(), values, filled_tasks })
}

/// Rows of named real-valued columns keyed by participant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl FeatureTable {
    pub fn from_participants(vectors: &[ParticipantFeatureVector]) -> Self {
        FeatureTable {
            columns: ParticipantFeatureVector::column_names(),
            rows: vectors.iter().map(|v| (v.participant_id.clone(), v.values.clone())).collect(),
        }
    }

    /// Header plus one row per participant; reals use the shortest
    /// representation that parses back to the same value.
    pub fn write<W: Write>(&self, sink: W) -> Result<usize, FeatureError> {
        let table_err = |e: csv::Error| FeatureError::Table(e.to_string());
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
        let mut header = vec!["participant_id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(table_err)?;
        for (id, vals) in &self.rows {
            if vals.len() != self.columns.len() {
                return Err(FeatureError::WrongLength { expected: self.columns.len(), got: vals.len() });
            }
            let mut rec = vec![id.clone()];
            rec.extend(vals.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(table_err)?;
        }
        w.flush().map_err(|e| FeatureError::Table(e.to_string()))?;
        Ok(self.rows.len())
    }

    pub fn read<R: Read>(source: R) -> Result<Self, FeatureError> {
        let table_err = |e: csv::Error| FeatureError::Table(e.to_string());
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
        let header = r.headers().map_err(table_err)?.clone();
        if header.get(0) != Some("participant_id") {
            return Err(FeatureError::Table("first column must be participant_id".into()));
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(table_err)?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|_| FeatureError::Table(format!("bad real {s:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((rec[0].to_string(), vals));
        }
        Ok(FeatureTable { columns, rows })
    }
}

pub fn write_feature_table<W: Write>(vectors: &[ParticipantFeatureVector], sink: W) -> Result<usize, FeatureError> {
    FeatureTable::from_participants(vectors).write(sink)
}
