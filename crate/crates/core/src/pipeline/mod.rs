//! Config-driven orchestration: train → predict → ensemble → score → submit.
//!
//! Everything a run produces lives under `run_dir`:
//!
//! ```text
//! models/<encoder>__<target>/            model.json, model.meta, train_report.tsv
//! predictions/<split>/<encoder>__<target>.tsv(.meta)
//! ensembles/<combiner>/combiner_<target>.json(.meta)
//! ensembles/<combiner>/<split>_<target>.tsv(.meta)
//! results.log                            append-only evaluation blocks
//! submission.tsv
//! ```

mod config;
mod run;
mod score;
mod submission;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::{DatasetError, Split};
use crate::encoders::EncoderError;
use crate::ensemble::EnsembleError;
use crate::metrics::MetricError;
use crate::Target;

pub use config::{load_config, DataPaths, NamedCombiner, RunConfig, DEFAULT_SEED};
pub use run::{run_ensemble, run_predict, run_train, EnsembleOutcome, TrainOutcome};
pub use score::{read_prediction_column, run_score, score_submission, PredictionColumn};
pub use submission::{
    read_submission, read_submission_with, run_submit, write_submission, write_submission_with,
    SubmissionFormat,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },
    #[error("stale artifact {path}: {reason}")]
    StaleArtifact { path: PathBuf, reason: String },
    #[error("{path}: {message}")]
    MalformedPredictions { path: PathBuf, message: String },
    #[error("predictions do not line up with gold: {0}")]
    Alignment(String),
    #[error("empathy has {empathy} predictions but distress has {distress}")]
    LengthMismatch { empathy: usize, distress: usize },
    #[error("empathy and distress predictions come from different datasets")]
    FingerprintMismatch,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl PipelineError {
    /// Process exit code: 2 config, 3 data, 4 missing artifact, 5 metric, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::ConfigInvalid(_) => 2,
            PipelineError::Encoder(EncoderError::UnknownEncoder(_))
            | PipelineError::Encoder(EncoderError::InvalidSpec(_)) => 2,
            PipelineError::Ensemble(
                EnsembleError::UnknownKind(_)
                | EnsembleError::UnknownHyper { .. }
                | EnsembleError::InvalidHyper { .. },
            ) => 2,
            PipelineError::Dataset(DatasetError::Io { .. }) => 3,
            PipelineError::Dataset(_)
            | PipelineError::Alignment(_)
            | PipelineError::MalformedPredictions { .. }
            | PipelineError::LengthMismatch { .. }
            | PipelineError::FingerprintMismatch => 3,
            PipelineError::Encoder(EncoderError::EncoderLoadFailure { .. })
            | PipelineError::Encoder(EncoderError::Artifact(_))
            | PipelineError::MissingArtifact { .. }
            | PipelineError::StaleArtifact { .. } => 4,
            PipelineError::Ensemble(EnsembleError::Cache { .. }) => 4,
            PipelineError::Encoder(_) | PipelineError::Ensemble(_) => 3,
            PipelineError::Metric(_) => 5,
            PipelineError::Io { .. } => 1,
        }
    }
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// File-system-safe form of an encoder name (`org/model` → `org--model`).
pub fn slug(name: &str) -> String {
    name.replace('/', "--")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Paths inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn model_dir(&self, encoder: &str, target: Target) -> PathBuf {
        self.root.join("models").join(format!("{}__{target}", slug(encoder)))
    }

    pub fn prediction_file(&self, split: Split, encoder: &str, target: Target) -> PathBuf {
        self.root
            .join("predictions")
            .join(split.as_str())
            .join(format!("{}__{target}.tsv", slug(encoder)))
    }

    pub fn combiner_file(&self, combiner: &str, target: Target) -> PathBuf {
        self.root.join("ensembles").join(combiner).join(format!("combiner_{target}.json"))
    }

    pub fn ensemble_prediction_file(&self, combiner: &str, split: Split, target: Target) -> PathBuf {
        self.root.join("ensembles").join(combiner).join(format!("{split}_{target}.tsv"))
    }

    pub fn results_log(&self) -> PathBuf {
        self.root.join("results.log")
    }
}
