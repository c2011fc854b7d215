//! Synthetic cohorts: template transcripts, class-conditional embeddings,
//! MMSE scores and manifests, all derived from one seed.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, DEFAULT_EMBEDDING_DIM};
use crate::manifest::{CohortManifest, ManifestRow};
use crate::pipeline::{linguistic_table, PipelineOptions};
use crate::transcript::{
    write_transcript, AnnotatedSentence, AnnotatedToken, AnnotatedTranscript, Diagnosis, Task, Upos,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    /// HC, MCI, AD counts.
    pub train_counts: [usize; 3],
    pub dev_counts: [usize; 3],
    pub mmse_fraction: f64,
    pub embedding_dim: usize,
    /// Class offset in units of the within-class standard deviation.
    pub separation: f64,
    /// Embedding dimensions that carry the class offset, dealt round-robin over classes.
    pub informative_dims: usize,
    pub max_frames: usize,
    pub frame_noise: f64,
    pub class_mmse: [f64; 3],
    pub mmse_sigma: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            train_counts: [61, 44, 12],
            dev_counts: [21, 15, 4],
            mmse_fraction: 69.0 / 157.0,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            separation: 3.0,
            informative_dims: 32,
            max_frames: 8,
            frame_noise: 0.5,
            class_mmse: [28.5, 26.5, 22.0],
            mmse_sigma: 1.5,
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("cohort spec: {m}")));
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad("separation must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.mmse_fraction) {
            return bad("mmse_fraction must lie in [0, 1]");
        }
        if self.embedding_dim == 0 || self.informative_dims > self.embedding_dim {
            return bad("need 0 < informative_dims <= embedding_dim");
        }
        if self.max_frames == 0 {
            return bad("max_frames must be >= 1");
        }
        if !(self.frame_noise >= 0.0 && self.mmse_sigma >= 0.0) {
            return bad("noise levels must be >= 0");
        }
        Ok(())
    }

    pub fn n_participants(&self) -> usize {
        self.train_counts.iter().chain(&self.dev_counts).sum()
    }

    pub fn n_with_mmse(&self) -> usize {
        (self.mmse_fraction * self.n_participants() as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub all: CohortManifest,
    pub train: CohortManifest,
    pub dev: CohortManifest,
}

struct Person {
    id: String,
    class: Diagnosis,
    dev: bool,
}

fn roster(spec: &CohortSpec) -> Vec<Person> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut people = Vec::new();
    for (dev, counts) in [(false, spec.train_counts), (true, spec.dev_counts)] {
        let mut classes: Vec<Diagnosis> =
            Diagnosis::ALL.iter().zip(counts).flat_map(|(&d, n)| std::iter::repeat_n(d, n)).collect();
        classes.shuffle(&mut rng);
        people.extend(classes.into_iter().map(|class| Person { id: String::new(), class, dev }));
    }
    for (i, p) in people.iter_mut().enumerate() {
        p.id = format!("p{:04}", i + 1);
    }
    people
}

fn participant_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // participants use streams 1..=n; usize::MAX wraps to the reserved stream 0
    rng.set_stream((index as u64).wrapping_add(1));
    rng
}

/// Probabilities steering one participant's transcripts.
struct Style {
    filler: f64,
    pronoun: f64,
    definite: f64,
    adverb: f64,
    adjunct: f64,
    terminal: f64,
    seconds_per_word: f64,
}

impl Style {
    fn new(severity: f64) -> Style {
        let p = |v: f64| v.clamp(0.0, 1.0);
        Style {
            filler: p(0.05 + 0.35 * severity),
            pronoun: p(0.2 + 0.4 * severity),
            definite: p(0.7 - 0.4 * severity),
            adverb: p(0.5 - 0.35 * severity),
            adjunct: p(0.45 - 0.35 * severity),
            terminal: p(0.95 - 0.3 * severity),
            seconds_per_word: (0.45 + 0.35 * severity).max(0.2),
        }
    }
}

const NOUNS: [&str; 12] =
    ["boy", "girl", "mother", "cookie", "jar", "stool", "water", "sink", "plate", "window", "curtain", "dish"];
const VERBS: [(&str, &str); 10] = [
    ("takes", "take"),
    ("reaches", "reach"),
    ("falls", "fall"),
    ("washes", "wash"),
    ("dries", "dry"),
    ("holds", "hold"),
    ("spills", "spill"),
    ("climbs", "climb"),
    ("watches", "watch"),
    ("grabs", "grab"),
];
const ADVERBS: [&str; 5] = ["quickly", "now", "there", "again", "carefully"];
const PRONOUNS: [&str; 4] = ["he", "she", "it", "they"];
const FILLERS: [&str; 3] = ["um", "uh", "er"];
const ANIMALS: [&str; 10] = ["dog", "cat", "horse", "cow", "lion", "tiger", "bird", "fish", "mouse", "sheep"];
const P_WORDS: [&str; 10] = ["pig", "pen", "paper", "pencil", "pizza", "plant", "pony", "park", "piano", "pear"];

#[derive(Default)]
struct Builder {
    toks: Vec<AnnotatedToken>,
}

impl Builder {
    fn add(&mut self, form: &str, lemma: &str, upos: Upos, deprel: &str) -> usize {
        let index = self.toks.len() + 1;
        self.toks.push(AnnotatedToken {
            index,
            surface_form: form.to_string(),
            lemma: lemma.to_string(),
            upos,
            head: 0,
            deprel: deprel.to_string(),
            is_filler: upos == Upos::INTJ && FILLERS.contains(&form),
        });
        index
    }

    fn attach(&mut self, dep: usize, head: usize) {
        self.toks[dep - 1].head = head;
    }

    fn finish(self) -> AnnotatedSentence {
        let ends_with_terminal_punct = self.toks.last().is_some_and(|t| t.surface_form == ".");
        AnnotatedSentence { tokens: self.toks, ends_with_terminal_punct }
    }
}

fn filler<R: Rng>(b: &mut Builder, rng: &mut R) -> usize {
    let f = *FILLERS.choose(rng).expect("nonempty");
    b.add(f, f, Upos::INTJ, "discourse")
}

/// Subject or object phrase; returns the head token.
fn phrase<R: Rng>(b: &mut Builder, rng: &mut R, st: &Style, rel: &str, allow_pronoun: bool) -> usize {
    if allow_pronoun && rng.random_bool(st.pronoun) {
        let p = *PRONOUNS.choose(rng).expect("nonempty");
        return b.add(p, p, Upos::PRON, rel);
    }
    let det = if rng.random_bool(st.definite) { "the" } else { "a" };
    let d = b.add(det, det, Upos::DET, "det");
    let n = *NOUNS.choose(rng).expect("nonempty");
    let h = b.add(n, n, Upos::NOUN, rel);
    b.attach(d, h);
    h
}

fn description_sentence<R: Rng>(rng: &mut R, st: &Style) -> AnnotatedSentence {
    let mut b = Builder::default();
    let mut fillers = Vec::new();
    if rng.random_bool(st.filler) {
        fillers.push(filler(&mut b, rng));
    }
    let subj = phrase(&mut b, rng, st, "nsubj", true);
    let (form, lemma) = *VERBS.choose(rng).expect("nonempty");
    let verb = b.add(form, lemma, Upos::VERB, "root");
    b.attach(subj, verb);
    if rng.random_bool(st.filler) {
        fillers.push(filler(&mut b, rng));
    }
    if rng.random_bool(0.8) {
        let obj = phrase(&mut b, rng, st, "obj", true);
        b.attach(obj, verb);
    }
    if rng.random_bool(st.adverb) {
        let a = *ADVERBS.choose(rng).expect("nonempty");
        let adv = b.add(a, a, Upos::ADV, "advmod");
        b.attach(adv, verb);
    }
    if rng.random_bool(st.adjunct) {
        let m = if rng.random_bool(0.5) { "because" } else { "while" };
        let mark = b.add(m, m, Upos::SCONJ, "mark");
        let sub_subj = phrase(&mut b, rng, st, "nsubj", true);
        let (form, lemma) = *VERBS.choose(rng).expect("nonempty");
        let sub = b.add(form, lemma, Upos::VERB, "advcl");
        b.attach(mark, sub);
        b.attach(sub_subj, sub);
        b.attach(sub, verb);
    }
    for f in fillers {
        b.attach(f, verb);
    }
    if rng.random_bool(st.terminal) {
        let p = b.add(".", ".", Upos::PUNCT, "punct");
        b.attach(p, verb);
    }
    b.finish()
}

fn fluency_sentence<R: Rng>(rng: &mut R, st: &Style, words: &[&str]) -> AnnotatedSentence {
    let mut b = Builder::default();
    let mut fillers = Vec::new();
    if rng.random_bool(st.filler) {
        fillers.push(filler(&mut b, rng));
    }
    // "I say dog and cat" frames keep some clauses in the fluency tasks
    let framed = rng.random_bool(0.3);
    let verb = framed.then(|| {
        let s = b.add("I", "I", Upos::PRON, "nsubj");
        let v = b.add("say", "say", Upos::VERB, "root");
        b.attach(s, v);
        v
    });
    let first_word = *words.choose(rng).expect("nonempty");
    let first = b.add(first_word, first_word, Upos::NOUN, if framed { "obj" } else { "root" });
    if let Some(v) = verb {
        b.attach(first, v);
    }
    for _ in 0..rng.random_range(1..=4) {
        if rng.random_bool(st.filler) {
            let f = filler(&mut b, rng);
            b.attach(f, first);
        }
        let cc = rng.random_bool(0.3).then(|| b.add("and", "and", Upos::CCONJ, "cc"));
        let w = *words.choose(rng).expect("nonempty");
        let item = b.add(w, w, Upos::NOUN, "conj");
        b.attach(item, first);
        if let Some(cc) = cc {
            b.attach(cc, item);
        }
    }
    let root = verb.unwrap_or(first);
    for f in fillers {
        b.attach(f, root);
    }
    if rng.random_bool(st.terminal) {
        let p = b.add(".", ".", Upos::PUNCT, "punct");
        b.attach(p, root);
    }
    b.finish()
}

fn transcript<R: Rng>(rng: &mut R, pid: &str, task: Task, st: &Style) -> AnnotatedTranscript {
    let n = rng.random_range(5..=9);
    let sentences: Vec<AnnotatedSentence> = (0..n)
        .map(|_| match task {
            Task::Ctd => description_sentence(rng, st),
            Task::Sf => fluency_sentence(rng, st, &ANIMALS),
            Task::Pf => fluency_sentence(rng, st, &P_WORDS),
        })
        .collect();
    let words = sentences.iter().flat_map(|s| &s.tokens).filter(|t| t.upos != Upos::PUNCT).count();
    // whole milliseconds keep the manifest value exact
    let seconds = words as f64 * st.seconds_per_word * rng.random_range(0.9..1.1);
    let duration_seconds = (seconds * 1000.0).round().max(1.0) / 1000.0;
    AnnotatedTranscript { participant_id: pid.to_string(), task, duration_seconds, sentences }
}

fn embedding<R: Rng>(rng: &mut R, spec: &CohortSpec, pid: &str, class: Diagnosis) -> Result<EmbeddingMatrix> {
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let center: Vec<f64> = (0..spec.embedding_dim)
        .map(|j| {
            let offset = if j < spec.informative_dims && j % 3 == class.index() { spec.separation } else { 0.0 };
            offset + unit.sample(rng)
        })
        .collect();
    let frames = (0..rng.random_range(1..=spec.max_frames))
        .map(|_| center.iter().map(|c| c + spec.frame_noise * unit.sample(rng)).collect())
        .collect();
    Ok(EmbeddingMatrix::new(pid, Task::Ctd, frames, spec.embedding_dim)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_manifest(path: &Path, m: &CohortManifest) -> Result<()> {
    let mut buf = Vec::new();
    m.write(&mut buf).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
    write_file(path, &buf)
}

/// Writes `transcripts/`, `embeddings/` (CTD only), `manifest.csv`,
/// `train.csv` and `dev.csv` under `out_dir`.
pub fn gen_cohort(spec: &CohortSpec, out_dir: &Path) -> Result<SyntheticCohort> {
    spec.validate()?;
    let people = roster(spec);
    for sub in ["transcripts", "embeddings"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let mut order: Vec<usize> = (0..people.len()).collect();
    order.shuffle(&mut participant_rng(spec.seed, usize::MAX - 1));
    let mut has_mmse = vec![false; people.len()];
    order.iter().take(spec.n_with_mmse()).for_each(|&i| has_mmse[i] = true);

    let rows = people
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = participant_rng(spec.seed, i);
            let level = [0.0, 0.5, 1.0][p.class.index()];
            let severity =
                spec.separation / 3.0 * (level + 0.15 * Normal::new(0.0, 1.0).expect("valid").sample(&mut rng));
            let style = Style::new(severity);
            let mmse_draw = spec.class_mmse[p.class.index()]
                + spec.mmse_sigma * Normal::new(0.0, 1.0).expect("valid").sample(&mut rng);
            let mmse = has_mmse[i].then(|| mmse_draw.clamp(19.0, 30.0).round());

            let emb = embedding(&mut rng, spec, &p.id, p.class)?;
            let emb_rel = format!("embeddings/{}_CTD.emb", p.id);
            let mut buf = Vec::new();
            emb.write_binary(&mut buf).map_err(|e| Error::io(&out_dir.join(&emb_rel), e))?;
            write_file(&out_dir.join(&emb_rel), &buf)?;

            let mut rows = Vec::new();
            for task in Task::ALL {
                let t = transcript(&mut rng, &p.id, task, &style);
                let rel = format!("transcripts/{}_{}.conllu", p.id, task);
                let mut buf = Vec::new();
                write_transcript(&t, &mut buf).map_err(|e| Error::io(&out_dir.join(&rel), e))?;
                write_file(&out_dir.join(&rel), &buf)?;
                rows.push(ManifestRow {
                    participant_id: p.id.clone(),
                    task,
                    transcript_path: rel,
                    embedding_path: (task == Task::Ctd).then(|| emb_rel.clone()),
                    duration_seconds: t.duration_seconds,
                    diagnosis: Some(p.class),
                    mmse,
                });
            }
            Ok((p.dev, rows))
        })
        .collect::<Result<Vec<_>>>()?;

    let base_dir = out_dir.to_path_buf();
    let mut cohort = SyntheticCohort {
        all: CohortManifest { rows: Vec::new(), base_dir: base_dir.clone() },
        train: CohortManifest { rows: Vec::new(), base_dir: base_dir.clone() },
        dev: CohortManifest { rows: Vec::new(), base_dir },
    };
    for (dev, rows) in rows {
        let split = if dev { &mut cohort.dev } else { &mut cohort.train };
        split.rows.extend(rows.iter().cloned());
        cohort.all.rows.extend(rows);
    }
    write_cohort_manifests(&cohort, out_dir)?;
    Ok(cohort)
}

fn write_cohort_manifests(c: &SyntheticCohort, out_dir: &Path) -> Result<()> {
    write_manifest(&out_dir.join("manifest.csv"), &c.all)?;
    write_manifest(&out_dir.join("train.csv"), &c.train)?;
    write_manifest(&out_dir.join("dev.csv"), &c.dev)
}

/// Ground truth for a linear MMSE signal over the 42 linguistic features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSignal {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTruth {
    pub signal: RegressionSignal,
    pub columns: Vec<String>,
    /// (participant, noise-free linear value, stored target)
    pub targets: Vec<(String, f64, f64)>,
}

/// Generates a cohort, then replaces every MMSE value with
/// `clamp(intercept + coefficients . features + noise, 0, 30)`. The truth is
/// written to `signal.json`.
pub fn gen_regression_signal(
    spec: &CohortSpec,
    signal: &RegressionSignal,
    out_dir: &Path,
) -> Result<(SyntheticCohort, SignalTruth)> {
    if signal.coefficients.len() != crate::features::PARTICIPANT_FEATURES {
        return Err(Error::Validation(format!("need 42 coefficients, got {}", signal.coefficients.len())));
    }
    if !(signal.intercept.is_finite() && signal.coefficients.iter().all(|c| c.is_finite()) && signal.noise_sigma >= 0.0)
    {
        return Err(Error::Validation("signal coefficients must be finite and noise_sigma >= 0".into()));
    }
    let mut cohort = gen_cohort(spec, out_dir)?;
    let (table, _) = linguistic_table(&cohort.all, &Task::ALL, &PipelineOptions::default())?;
    let mut rng = participant_rng(spec.seed, usize::MAX);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let mut targets = Vec::new();
    for (pid, x) in &table.rows {
        let linear = signal.intercept + signal.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
        let eps = noise.sample(&mut rng);
        if cohort.all.mmse(pid).is_some() {
            targets.push((pid.clone(), linear, (linear + signal.noise_sigma * eps).clamp(0.0, 30.0)));
        }
    }
    for m in [&mut cohort.all, &mut cohort.train, &mut cohort.dev] {
        for row in m.rows.iter_mut() {
            if let Some((_, _, y)) = targets.iter().find(|(p, _, _)| *p == row.participant_id) {
                row.mmse = Some(*y);
            }
        }
    }
    write_cohort_manifests(&cohort, out_dir)?;
    let truth = SignalTruth { signal: signal.clone(), columns: table.columns, targets };
    let mut json = serde_json::to_string_pretty(&truth).expect("truth serializes");
    json.push('\n');
    write_file(&out_dir.join("signal.json"), json.as_bytes())?;
    Ok((cohort, truth))
}
