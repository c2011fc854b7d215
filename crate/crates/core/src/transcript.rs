//! Dependency-annotated transcript format.
//!
//! A transcript is a 6-column subset of CoNLL-U: `ID FORM LEMMA UPOS HEAD
//! DEPREL`, tab separated, one token per line, sentences separated by blank
//! lines and `#` comment lines ignored. Full 10-column CoNLL-U is accepted
//! as-is (XPOS, FEATS, DEPS and MISC are dropped). Multi-word token ranges (`3-4`) and
//! empty nodes (`5.1`) are rejected.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FillerLexicon;

/// The three elicitation tasks, in canonical block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Cookie Theft picture description.
    #[serde(rename = "CTD")]
    Ctd,
    /// Semantic fluency.
    #[serde(rename = "SF")]
    Sf,
    /// Phonemic fluency.
    #[serde(rename = "PF")]
    Pf,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Ctd, Task::Sf, Task::Pf];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ctd => "CTD",
            Task::Sf => "SF",
            Task::Pf => "PF",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Task::Ctd => 0,
            Task::Sf => 1,
            Task::Pf => 2,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CTD" => Ok(Task::Ctd),
            "SF" => Ok(Task::Sf),
            "PF" => Ok(Task::Pf),
            other => Err(other.to_string()),
        }
    }
}

/// Diagnosis label. The discriminant is the class index used by learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    #[serde(rename = "HC")]
    Hc = 0,
    #[serde(rename = "MCI")]
    Mci = 1,
    #[serde(rename = "AD")]
    Ad = 2,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 3] = [Diagnosis::Hc, Diagnosis::Mci, Diagnosis::Ad];

    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::Hc => "HC",
            Diagnosis::Mci => "MCI",
            Diagnosis::Ad => "AD",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Diagnosis> {
        Diagnosis::ALL.get(i).copied()
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Diagnosis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "HC" => Ok(Diagnosis::Hc),
            "MCI" => Ok(Diagnosis::Mci),
            "AD" => Ok(Diagnosis::Ad),
            other => Err(other.to_string()),
        }
    }
}

/// Universal POS tags (UD v2).
#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Upos {
    ADJ,
    ADP,
    ADV,
    AUX,
    CCONJ,
    DET,
    INTJ,
    NOUN,
    NUM,
    PART,
    PRON,
    PROPN,
    PUNCT,
    SCONJ,
    SYM,
    VERB,
    X,
}

impl Upos {
    pub fn as_str(self) -> &'static str {
        use Upos::*;
        match self {
            ADJ => "ADJ",
            ADP => "ADP",
            ADV => "ADV",
            AUX => "AUX",
            CCONJ => "CCONJ",
            DET => "DET",
            INTJ => "INTJ",
            NOUN => "NOUN",
            NUM => "NUM",
            PART => "PART",
            PRON => "PRON",
            PROPN => "PROPN",
            PUNCT => "PUNCT",
            SCONJ => "SCONJ",
            SYM => "SYM",
            VERB => "VERB",
            X => "X",
        }
    }

    pub fn is_verbal(self) -> bool {
        matches!(self, Upos::VERB | Upos::AUX)
    }

    pub fn is_nominal(self) -> bool {
        matches!(self, Upos::NOUN | Upos::PROPN)
    }
}

impl FromStr for Upos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use Upos::*;
        Ok(match s {
            "ADJ" => ADJ,
            "ADP" => ADP,
            "ADV" => ADV,
            "AUX" => AUX,
            "CCONJ" => CCONJ,
            "DET" => DET,
            "INTJ" => INTJ,
            "NOUN" => NOUN,
            "NUM" => NUM,
            "PART" => PART,
            "PRON" => PRON,
            "PROPN" => PROPN,
            "PUNCT" => PUNCT,
            "SCONJ" => SCONJ,
            "SYM" => SYM,
            "VERB" => VERB,
            "X" => X,
            other => return Err(other.to_string()),
        })
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedToken {
    /// 1-based position in the sentence.
    pub index: usize,
    pub surface_form: String,
    pub lemma: String,
    pub upos: Upos,
    /// Index of the syntactic head, 0 for the root.
    pub head: usize,
    pub deprel: String,
    pub is_filler: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub tokens: Vec<AnnotatedToken>,
    pub ends_with_terminal_punct: bool,
}

impl AnnotatedSentence {
    /// Token at a 1-based index.
    pub fn token(&self, index: usize) -> Option<&AnnotatedToken> {
        index.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    /// Head token of `tok`, or `None` for the root.
    pub fn head_of(&self, tok: &AnnotatedToken) -> Option<&AnnotatedToken> {
        if tok.head == 0 {
            None
        } else {
            self.token(tok.head)
        }
    }

    /// Direct dependents of the token at `index`.
    pub fn dependents(&self, index: usize) -> impl Iterator<Item = &AnnotatedToken> {
        self.tokens.iter().filter(move |t| t.head == index)
    }

    pub fn root(&self) -> Option<&AnnotatedToken> {
        self.tokens.iter().find(|t| t.head == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTranscript {
    pub participant_id: String,
    pub task: Task,
    pub duration_seconds: f64,
    pub sentences: Vec<AnnotatedSentence>,
}

impl AnnotatedTranscript {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TranscriptError {
    #[error("line {line}: malformed token line: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: bad head reference: {reason}")]
    BadHeadReference { line: usize, reason: String },
    #[error("line {line}: unknown UPOS tag {tag:?}")]
    UnknownUposTag { line: usize, tag: String },
    #[error("duration must be positive and finite, got {0}")]
    NonPositiveDuration(f64),
    #[error("transcript is not valid UTF-8")]
    InvalidEncoding,
    #[error("I/O error: {0}")]
    Io(String),
}

const TERMINAL_PUNCT: [&str; 3] = [".", "!", "?"];

/// Parses a transcript with the default filler lexicon.
pub fn parse_transcript<R: Read>(
    reader: R,
    participant_id: &str,
    task: Task,
    duration_seconds: f64,
) -> Result<AnnotatedTranscript, TranscriptError> {
    parse_transcript_with(reader, participant_id, task, duration_seconds, &FillerLexicon::default())
}

pub fn parse_transcript_with<R: Read>(
    mut reader: R,
    participant_id: &str,
    task: Task,
    duration_seconds: f64,
    fillers: &FillerLexicon,
) -> Result<AnnotatedTranscript, TranscriptError> {
    if !(duration_seconds > 0.0 && duration_seconds.is_finite()) {
        return Err(TranscriptError::NonPositiveDuration(duration_seconds));
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| TranscriptError::Io(e.to_string()))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| TranscriptError::InvalidEncoding)?;
    let sentences = parse_sentences(text, fillers)?;
    Ok(AnnotatedTranscript { participant_id: participant_id.to_string(), task, duration_seconds, sentences })
}

fn parse_sentences(text: &str, fillers: &FillerLexicon) -> Result<Vec<AnnotatedSentence>, TranscriptError> {
    let mut sentences = Vec::new();
    let mut current: Vec<AnnotatedToken> = Vec::new();
    let mut first_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(finish_sentence(std::mem::take(&mut current), first_line)?);
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if current.is_empty() {
            first_line = line_no;
        }
        let token = parse_token_line(line, line_no, fillers)?;
        if token.index != current.len() + 1 {
            return Err(TranscriptError::MalformedLine {
                line: line_no,
                reason: format!("expected token id {}, found {}", current.len() + 1, token.index),
            });
        }
        current.push(token);
    }
    if !current.is_empty() {
        sentences.push(finish_sentence(current, first_line)?);
    }
    Ok(sentences)
}

fn parse_token_line(line: &str, line_no: usize, fillers: &FillerLexicon) -> Result<AnnotatedToken, TranscriptError> {
    let all: Vec<&str> = line.split('\t').collect();
    // Full CoNLL-U keeps HEAD and DEPREL in columns 7 and 8; shorter lines use
    // the 6-column layout with any extra columns ignored.
    let cols: [&str; 6] = match all.len() {
        6..=9 => [all[0], all[1], all[2], all[3], all[4], all[5]],
        10 => [all[0], all[1], all[2], all[3], all[6], all[7]],
        n => {
            return Err(TranscriptError::MalformedLine {
                line: line_no,
                reason: format!("expected 6 to 10 tab-separated columns, found {n}"),
            })
        }
    };
    let malformed = |reason: String| TranscriptError::MalformedLine { line: line_no, reason };

    let index = parse_decimal(cols[0]).ok_or_else(|| malformed(format!("bad token id {:?}", cols[0])))?;
    if index == 0 {
        return Err(malformed("token id must be positive".into()));
    }
    let form = cols[1];
    let lemma = cols[2];
    if form.is_empty() {
        return Err(malformed("empty FORM".into()));
    }
    let upos: Upos = cols[3].parse().map_err(|tag| TranscriptError::UnknownUposTag { line: line_no, tag })?;
    let head = parse_decimal(cols[4]).ok_or_else(|| malformed(format!("bad head {:?}", cols[4])))?;
    let deprel = cols[5];
    if deprel.is_empty() {
        return Err(malformed("empty DEPREL".into()));
    }
    if head == index {
        return Err(TranscriptError::BadHeadReference {
            line: line_no,
            reason: format!("token {index} is its own head"),
        });
    }
    let is_filler = matches!(upos, Upos::INTJ | Upos::X) && fillers.contains(form);
    Ok(AnnotatedToken {
        index,
        surface_form: form.to_string(),
        lemma: lemma.to_string(),
        upos,
        head,
        deprel: deprel.to_string(),
        is_filler,
    })
}

/// Plain positive decimal integer: no sign, no range, no decimal point.
fn parse_decimal(s: &str) -> Option<usize> {
    if s.is_empty() || s.len() > 9 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn finish_sentence(tokens: Vec<AnnotatedToken>, line: usize) -> Result<AnnotatedSentence, TranscriptError> {
    check_heads(&tokens).map_err(|reason| TranscriptError::BadHeadReference { line, reason })?;
    let ends_with_terminal_punct = tokens.last().is_some_and(|t| TERMINAL_PUNCT.contains(&t.surface_form.as_str()));
    Ok(AnnotatedSentence { tokens, ends_with_terminal_punct })
}

/// Single root, in-range heads, no self loops and an acyclic head graph.
pub(crate) fn check_heads(tokens: &[AnnotatedToken]) -> Result<(), String> {
    let n = tokens.len();
    let mut roots = 0;
    for t in tokens {
        if t.head > n {
            return Err(format!("token {} points to head {} beyond sentence length {n}", t.index, t.head));
        }
        if t.head == t.index {
            return Err(format!("token {} is its own head", t.index));
        }
        if t.head == 0 {
            roots += 1;
        }
    }
    if roots != 1 {
        return Err(format!("sentence has {roots} roots, expected exactly one"));
    }
    // 0 = unvisited, 1 = on current path, 2 = known to reach the root
    let mut state = vec![0u8; n + 1];
    for start in 1..=n {
        let mut path = Vec::new();
        let mut cur = start;
        while cur != 0 && state[cur] != 2 {
            if state[cur] == 1 {
                return Err(format!("cycle through token {cur}"));
            }
            state[cur] = 1;
            path.push(cur);
            cur = tokens[cur - 1].head;
        }
        for p in path {
            state[p] = 2;
        }
    }
    Ok(())
}

/// Writes the 6-column form of a transcript.
pub fn write_transcript<W: Write>(t: &AnnotatedTranscript, mut w: W) -> std::io::Result<()> {
    for (i, s) in t.sentences.iter().enumerate() {
        if i > 0 {
            writeln!(w)?;
        }
        for tok in &s.tokens {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                tok.index, tok.surface_form, tok.lemma, tok.upos, tok.head, tok.deprel
            )?;
        }
    }
    Ok(())
}
