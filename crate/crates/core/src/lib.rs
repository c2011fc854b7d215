//! Cognitive-marker toolkit: transcript and manifest ingest, linguistic
//! features, embedding pooling, tree/boosting/network learners, voting
//! ensembles, cross-validation and synthetic cohorts.

pub mod config;
pub mod embedding;
pub mod ensemble;
pub mod eval;
pub mod features;
pub mod learners;
pub mod manifest;
pub mod pipeline;
pub mod synth;
pub mod transcript;

use std::path::Path;

use thiserror::Error;

/// Top-level error for pipeline stages that touch several modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Transcript(#[from] transcript::TranscriptError),
    #[error(transparent)]
    Manifest(#[from] manifest::ManifestError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Embedding(#[from] embedding::EmbeddingError),
    #[error(transparent)]
    Learner(#[from] learners::LearnerError),
    #[error(transparent)]
    Ensemble(#[from] ensemble::EnsembleError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("validation failed: {0}")]
    Validation(String),
}

impl Error {
    pub fn io(path: &Path, e: std::io::Error) -> Error {
        Error::Io { path: path.display().to_string(), message: e.to_string() }
    }

    /// Short stable tag used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Transcript(_) => "transcript",
            Error::Manifest(_) => "manifest",
            Error::Feature(_) => "features",
            Error::Embedding(_) => "embedding",
            Error::Learner(_) => "learner",
            Error::Ensemble(_) => "ensemble",
            Error::Eval(_) => "eval",
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
