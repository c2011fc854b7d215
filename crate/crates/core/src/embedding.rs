//! Audio embedding files and file-level pooling.
//!
//! Two on-disk forms are accepted. The text form is comma-separated reals,
//! one frame per line, no header. The binary form starts with a 16-byte
//! header (`EMB1`, rows: u32 LE, dim: u32 LE, 4 reserved bytes) followed by
//! `rows * dim` little-endian f32 values in row-major order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::CohortManifest;
use crate::transcript::Task;

pub const DEFAULT_EMBEDDING_DIM: usize = 1280;
pub const BINARY_MAGIC: &[u8; 4] = b"EMB1";
const BINARY_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("row {row} has {got} columns, expected {expected}")]
    DimensionMismatch { row: usize, expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("embedding file has no frames")]
    EmptyMatrix,
    #[error("malformed embedding file: {0}")]
    Malformed(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub participant_id: String,
    pub task: Task,
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(
        participant_id: &str,
        task: Task,
        frames: Vec<Vec<f64>>,
        expected_dim: usize,
    ) -> Result<Self, EmbeddingError> {
        if frames.is_empty() {
            return Err(EmbeddingError::EmptyMatrix);
        }
        let mut values = Vec::with_capacity(frames.len() * expected_dim);
        for (r, frame) in frames.iter().enumerate() {
            if frame.len() != expected_dim {
                return Err(EmbeddingError::DimensionMismatch { row: r, expected: expected_dim, got: frame.len() });
            }
            values.extend_from_slice(frame);
        }
        Self::from_flat(participant_id, task, frames.len(), expected_dim, values)
    }

    fn from_flat(
        participant_id: &str,
        task: Task,
        rows: usize,
        dim: usize,
        values: Vec<f64>,
    ) -> Result<Self, EmbeddingError> {
        if rows == 0 || dim == 0 {
            return Err(EmbeddingError::EmptyMatrix);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFiniteValue { row: i / dim, col: i % dim });
        }
        Ok(EmbeddingMatrix { participant_id: participant_id.to_string(), task, rows, dim, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for frame in self.frames() {
            let line: Vec<String> = frame.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Binary form; values are narrowed to f32.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let rows = u32::try_from(self.rows).map_err(|_| std::io::Error::other("too many rows"))?;
        let dim = u32::try_from(self.dim).map_err(|_| std::io::Error::other("dimension too large"))?;
        let mut buf = Vec::with_capacity(BINARY_HEADER_LEN + self.values.len() * 4);
        buf.extend_from_slice(BINARY_MAGIC);
        buf.extend_from_slice(&rows.to_le_bytes());
        buf.extend_from_slice(&dim.to_le_bytes());
        buf.extend_from_slice(&[0u8; 4]);
        for v in &self.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }
}

/// Parses either file form, detected by the magic bytes.
pub fn parse_embedding(
    bytes: &[u8],
    participant_id: &str,
    task: Task,
    expected_dim: usize,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(bytes, participant_id, task, expected_dim)
    } else {
        parse_text(bytes, participant_id, task, expected_dim)
    }
}

fn parse_binary(
    bytes: &[u8],
    participant_id: &str,
    task: Task,
    expected_dim: usize,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    if bytes.len() < BINARY_HEADER_LEN {
        return Err(EmbeddingError::Malformed("truncated header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let rows = u32_at(4);
    let dim = u32_at(8);
    if rows == 0 {
        return Err(EmbeddingError::EmptyMatrix);
    }
    if dim != expected_dim {
        return Err(EmbeddingError::DimensionMismatch { row: 0, expected: expected_dim, got: dim });
    }
    let payload = &bytes[BINARY_HEADER_LEN..];
    let want = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| EmbeddingError::Malformed("header size overflow".into()))?;
    if payload.len() != want {
        return Err(EmbeddingError::Malformed(format!("expected {want} payload bytes, found {}", payload.len())));
    }
    let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    EmbeddingMatrix::from_flat(participant_id, task, rows, dim, values)
}

fn parse_text(
    bytes: &[u8],
    participant_id: &str,
    task: Task,
    expected_dim: usize,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    let text = std::str::from_utf8(bytes).map_err(|_| EmbeddingError::Malformed("not UTF-8 text".into()))?;
    let mut values = Vec::new();
    let mut rows = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = 0;
        for cell in line.split(',') {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| EmbeddingError::Malformed(format!("row {rows}: bad number {:?}", cell.trim())))?;
            if !v.is_finite() {
                return Err(EmbeddingError::NonFiniteValue { row: rows, col: cols });
            }
            values.push(v);
            cols += 1;
        }
        if cols != expected_dim {
            return Err(EmbeddingError::DimensionMismatch { row: rows, expected: expected_dim, got: cols });
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(EmbeddingError::EmptyMatrix);
    }
    EmbeddingMatrix::from_flat(participant_id, task, rows, expected_dim, values)
}

pub fn load_embedding(
    path: &Path,
    participant_id: &str,
    task: Task,
    expected_dim: usize,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    let bytes = std::fs::read(path)
        .map_err(|e| EmbeddingError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_embedding(&bytes, participant_id, task, expected_dim)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMethod {
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEmbedding {
    pub participant_id: String,
    pub task: Task,
    pub values: Vec<f64>,
}

/// Collapses frames into one vector per file.
pub fn pool(m: &EmbeddingMatrix, method: PoolingMethod) -> PooledEmbedding {
    let values = match method {
        PoolingMethod::Mean if m.rows == 1 => m.frame(0).to_vec(),
        PoolingMethod::Mean => {
            let mut sum = vec![0.0; m.dim];
            let mut lo = vec![f64::INFINITY; m.dim];
            let mut hi = vec![f64::NEG_INFINITY; m.dim];
            for frame in m.frames() {
                for (j, &v) in frame.iter().enumerate() {
                    sum[j] += v;
                    lo[j] = lo[j].min(v);
                    hi[j] = hi[j].max(v);
                }
            }
            let n = m.rows as f64;
            // rounding can push a mean an ulp outside the column range
            sum.iter().zip(lo.iter().zip(&hi)).map(|(s, (l, h))| (s / n).clamp(*l, *h)).collect()
        }
    };
    PooledEmbedding { participant_id: m.participant_id.clone(), task: m.task, values }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinedEmbeddings {
    pub vectors: Vec<PooledEmbedding>,
    /// Participants without a usable embedding, with the reason.
    pub missing: Vec<(String, EmbeddingError)>,
}

/// One pooled vector per participant for `task`, in participant order.
pub fn join_embeddings(
    manifest: &CohortManifest,
    task: Task,
    expected_dim: usize,
    method: PoolingMethod,
) -> JoinedEmbeddings {
    use rayon::prelude::*;

    let participants = manifest.participants();
    let results: Vec<Result<PooledEmbedding, (String, EmbeddingError)>> = participants
        .par_iter()
        .map(|pid| {
            let missing = |e| (pid.clone(), e);
            let row = manifest.row(pid, task);
            let path = row.and_then(|r| r.embedding_path.as_deref()).ok_or_else(|| {
                missing(EmbeddingError::Io {
                    path: String::new(),
                    message: format!("no {task} embedding listed in manifest"),
                })
            })?;
            let m = load_embedding(&manifest.resolve(path), pid, task, expected_dim).map_err(missing)?;
            Ok(pool(&m, method))
        })
        .collect();
    let mut out = JoinedEmbeddings { vectors: Vec::new(), missing: Vec::new() };
    for r in results {
        match r {
            Ok(v) => out.vectors.push(v),
            Err(e) => out.missing.push(e),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(frames: Vec<Vec<f64>>) -> EmbeddingMatrix {
        let d = frames[0].len();
        EmbeddingMatrix::new("p", Task::Ctd, frames, d).unwrap()
    }

    #[test]
    fn load_text_37_by_1280() {
        let line: Vec<String> = (0..1280).map(|j| format!("{}", j as f64 * 0.001)).collect();
        let text: String = (0..37).map(|_| line.join(",") + "\n").collect();
        let m = parse_embedding(text.as_bytes(), "p", Task::Ctd, 1280).unwrap();
        assert_eq!((m.rows(), m.dim()), (37, 1280));
    }

    #[test]
    fn single_row_is_pre_pooled() {
        let row: Vec<f64> = (0..1280).map(|j| j as f64).collect();
        let m = matrix(vec![row.clone()]);
        assert_eq!(m.rows(), 1);
        assert_eq!(pool(&m, PoolingMethod::Mean).values, row);
    }

    #[test]
    fn short_row_is_dimension_mismatch() {
        let full = vec!["0.5"; 1280].join(",");
        let short = vec!["0.5"; 1279].join(",");
        let text = format!("{full}\n{short}\n{full}\n");
        let err = parse_embedding(text.as_bytes(), "p", Task::Ctd, 1280).unwrap_err();
        assert_eq!(err, EmbeddingError::DimensionMismatch { row: 1, expected: 1280, got: 1279 });
    }

    #[test]
    fn non_finite_and_empty() {
        assert_eq!(
            parse_embedding(b"1,NaN\n", "p", Task::Ctd, 2).unwrap_err(),
            EmbeddingError::NonFiniteValue { row: 0, col: 1 }
        );
        assert_eq!(parse_embedding(b"", "p", Task::Ctd, 2).unwrap_err(), EmbeddingError::EmptyMatrix);
        assert_eq!(parse_embedding(b"\n\n", "p", Task::Ctd, 2).unwrap_err(), EmbeddingError::EmptyMatrix);
    }

    #[test]
    fn column_means() {
        let m = matrix(vec![vec![1.0, 3.0], vec![3.0, 5.0]]);
        assert_eq!(pool(&m, PoolingMethod::Mean).values, vec![2.0, 4.0]);
        let z = matrix(vec![vec![0.0; 4]; 3]);
        assert_eq!(pool(&z, PoolingMethod::Mean).values, vec![0.0; 4]);
    }

    #[test]
    fn binary_round_trip_and_text_agreement() {
        let m = matrix(vec![vec![0.25, -1.5, 3.0], vec![0.1, 0.2, 0.3]]);
        let mut bin = Vec::new();
        m.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 16 + 6 * 4);
        let mut text = Vec::new();
        m.write_text(&mut text).unwrap();
        let from_bin = parse_embedding(&bin, "p", Task::Ctd, 3).unwrap();
        let from_text = parse_embedding(&text, "p", Task::Ctd, 3).unwrap();
        assert_eq!(from_text, m);
        for (a, b) in from_bin.frames().flatten().zip(from_text.frames().flatten()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn binary_errors() {
        let m = matrix(vec![vec![1.0, 2.0]]);
        let mut bin = Vec::new();
        m.write_binary(&mut bin).unwrap();
        assert!(matches!(parse_embedding(&bin[..20], "p", Task::Ctd, 2), Err(EmbeddingError::Malformed(_))));
        assert!(matches!(parse_embedding(&bin[..10], "p", Task::Ctd, 2), Err(EmbeddingError::Malformed(_))));
        assert!(matches!(
            parse_embedding(&bin, "p", Task::Ctd, 3),
            Err(EmbeddingError::DimensionMismatch { expected: 3, got: 2, .. })
        ));
    }
}
