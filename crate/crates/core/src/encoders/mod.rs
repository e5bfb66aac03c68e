//! Text encoders and the per-target regression heads trained on top of them.
//!
//! A [`Backbone`] maps essays to pooled embeddings. Backbones are looked up by
//! name in an [`EncoderRegistry`]; this crate registers the closed-form `toy`
//! encoder, and the transformer backends register themselves from their own crate.
//! [`train_regressor`] fits an affine head (and optionally fine-tunes the backbone)
//! with best-dev-Pearson checkpointing.

mod artifact;
mod head;
mod pooling;
mod toy;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Example;
use crate::fingerprint::{Fingerprint, Hasher};
use crate::{ScoreRange, Target};

pub use artifact::{load_model, save_model, stored_fingerprint, ModelArtifact, MODEL_BLOB, MODEL_META};
pub use head::{AdamW, AffineHead, FrozenSession};
pub use pooling::pool;
pub use toy::{ToyEncoder, TOY_DIM};
pub use train::{predict, train_regressor, EpochStats, Predictor, TrainReport};
pub(crate) use train::train_fingerprint;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("unknown encoder `{0}`")]
    UnknownEncoder(String),
    #[error("cannot load encoder `{name}`: {reason}")]
    EncoderLoadFailure { name: String, reason: String },
    #[error("invalid encoder spec: {0}")]
    InvalidSpec(String),
    #[error("cannot pool an empty token sequence")]
    EmptySequence,
    #[error("native_sentence pooling needs a sentence vector from the backbone")]
    MissingSentenceVector,
    #[error("no texts to encode")]
    NoTexts,
    #[error("all {0} labels are identical; dev Pearson would be undefined")]
    DegenerateLabels(&'static str),
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("empty {0} examples")]
    EmptyExamples(&'static str),
    #[error("backbone failure: {0}")]
    Backend(String),
    #[error("model artifact: {0}")]
    Artifact(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// First token (`<s>` / `[CLS]`).
    ClsToken,
    /// Mean over non-padding tokens.
    MeanTokens,
    /// The backbone's own sentence vector.
    NativeSentence,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::ClsToken => "cls_token",
            Pooling::MeanTokens => "mean_tokens",
            Pooling::NativeSentence => "native_sentence",
        }
    }
}

/// Which backbone to use and how to reduce its token states.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub name: String,
    #[serde(default = "default_pooling")]
    pub pooling: Pooling,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub frozen: bool,
}

fn default_pooling() -> Pooling {
    Pooling::ClsToken
}

fn default_max_tokens() -> usize {
    256
}

pub const MIN_MAX_TOKENS: usize = 8;

impl EncoderSpec {
    pub fn new(name: impl Into<String>, pooling: Pooling) -> Self {
        Self { name: name.into(), pooling, max_tokens: default_max_tokens(), frozen: false }
    }

    pub fn toy() -> Self {
        Self::new(toy::TOY_NAME, Pooling::MeanTokens)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.name.trim().is_empty() {
            return Err(EncoderError::InvalidSpec("encoder name is empty".into()));
        }
        if self.max_tokens < MIN_MAX_TOKENS {
            return Err(EncoderError::InvalidSpec(format!(
                "max_tokens must be at least {MIN_MAX_TOKENS}, got {}",
                self.max_tokens
            )));
        }
        Ok(())
    }

    pub(crate) fn hash_into(&self, h: &mut Hasher) {
        h.str(&self.name)
            .str(self.pooling.as_str())
            .u64(self.max_tokens as u64)
            .u64(self.frozen as u64);
    }
}

impl fmt::Display for EncoderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}, max {} tokens", self.name, self.pooling.as_str(), self.max_tokens)?;
        if self.frozen {
            f.write_str(", frozen")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Loss,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            epochs: 10,
            batch_size: 16,
            seed: 42,
            loss: Loss::Mse,
            weight_decay: 0.0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return Err("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub(crate) fn hash_into(&self, h: &mut Hasher) {
        h.f64(self.learning_rate)
            .u64(self.epochs as u64)
            .u64(self.batch_size as u64)
            .u64(self.seed)
            .str("mse")
            .f64(self.weight_decay)
            .f64(self.grad_clip.unwrap_or(0.0));
    }
}

/// A loaded text encoder. Implementations are read-only after construction.
pub trait Backbone: Send + Sync {
    fn name(&self) -> &str;

    /// Embedding width produced by [`Backbone::encode`].
    fn dim(&self) -> usize;

    /// One pooled embedding row per text. Deterministic for fixed weights.
    fn encode(&self, texts: &[String]) -> Result<Array2<f64>, EncoderError>;

    /// Full fine-tuning of backbone and head. `None` means the backbone has no
    /// trainable weights and the head is trained on frozen features instead.
    fn fine_tune(
        &self,
        _train: &[Example],
        _dev_texts: &[String],
        _head: AffineHead,
        _config: &TrainConfig,
    ) -> Option<Result<Box<dyn RegressionSession>, EncoderError>> {
        None
    }

    /// A copy of this backbone running the fine-tuned weights produced by a session.
    fn with_tuned_weights(&self, _blob: &[u8]) -> Result<Arc<dyn Backbone>, EncoderError> {
        Err(EncoderError::Backend(format!("{} has no tunable weights", self.name())))
    }
}

/// One training run driven by [`train_regressor`]'s epoch loop.
pub trait RegressionSession {
    /// One optimisation step on the given training-example indices. Returns the
    /// mean loss of the batch before the update.
    fn train_batch(&mut self, batch: &[usize]) -> Result<f64, EncoderError>;

    /// Raw (unclamped) head outputs on the dev texts.
    fn predict_dev(&mut self) -> Result<Vec<f64>, EncoderError>;

    /// Remember the current weights as the best checkpoint.
    fn mark_best(&mut self) -> Result<(), EncoderError>;

    /// Consume the session, returning the best checkpoint.
    fn into_best(self: Box<Self>) -> Result<TunedWeights, EncoderError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunedWeights {
    pub head: AffineHead,
    /// Serialized backbone weights when the backbone was fine-tuned.
    pub backbone: Option<Vec<u8>>,
}

pub type LoaderFn = dyn Fn(&EncoderSpec) -> Result<Arc<dyn Backbone>, EncoderError> + Send + Sync;

#[derive(Clone)]
struct Entry {
    sentence_native: bool,
    loader: Arc<LoaderFn>,
}

/// Name → loader table.
///
/// Exact names are matched first, then registered prefixes (e.g. `local:`).
#[derive(Clone, Default)]
pub struct EncoderRegistry {
    exact: BTreeMap<String, Entry>,
    prefixes: Vec<(String, Entry)>,
}

impl fmt::Debug for EncoderRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncoderRegistry")
            .field("names", &self.exact.keys().collect::<Vec<_>>())
            .field("prefixes", &self.prefixes.iter().map(|(p, _)| p).collect::<Vec<_>>())
            .finish()
    }
}

impl EncoderRegistry {
    /// Registry with only the built-in `toy` encoder.
    pub fn builtin() -> Self {
        let mut reg = Self::default();
        reg.register(toy::TOY_NAME, true, |spec| {
            Ok(Arc::new(ToyEncoder::new(spec.pooling, spec.max_tokens)) as Arc<dyn Backbone>)
        });
        reg
    }

    /// `sentence_native` marks backbones trained to emit sentence embeddings; only
    /// those accept [`Pooling::NativeSentence`].
    pub fn register<F>(&mut self, name: &str, sentence_native: bool, loader: F)
    where
        F: Fn(&EncoderSpec) -> Result<Arc<dyn Backbone>, EncoderError> + Send + Sync + 'static,
    {
        self.exact.insert(name.to_string(), Entry { sentence_native, loader: Arc::new(loader) });
    }

    pub fn register_prefix<F>(&mut self, prefix: &str, sentence_native: bool, loader: F)
    where
        F: Fn(&EncoderSpec) -> Result<Arc<dyn Backbone>, EncoderError> + Send + Sync + 'static,
    {
        self.prefixes
            .push((prefix.to_string(), Entry { sentence_native, loader: Arc::new(loader) }));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.exact.keys().map(String::as_str)
    }

    fn entry(&self, name: &str) -> Result<&Entry, EncoderError> {
        self.exact
            .get(name)
            .or_else(|| {
                self.prefixes.iter().find(|(p, _)| name.starts_with(p.as_str())).map(|(_, e)| e)
            })
            .ok_or_else(|| EncoderError::UnknownEncoder(name.to_string()))
    }

    /// Checks an encoder spec against the registry without loading weights.
    pub fn validate(&self, spec: &EncoderSpec) -> Result<(), EncoderError> {
        spec.validate()?;
        let entry = self.entry(&spec.name)?;
        if spec.pooling == Pooling::NativeSentence && !entry.sentence_native {
            return Err(EncoderError::InvalidSpec(format!(
                "`{}` is not a sentence-embedding backbone; native_sentence pooling is unavailable",
                spec.name
            )));
        }
        Ok(())
    }

    pub fn load(&self, spec: &EncoderSpec) -> Result<Arc<dyn Backbone>, EncoderError> {
        self.validate(spec)?;
        (self.entry(&spec.name)?.loader)(spec)
    }
}

/// Per-record predictions of one model for one target, clamped to the score range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector {
    pub values: Vec<f64>,
    pub record_ids: Vec<String>,
    pub source_model: String,
    pub target: Target,
    pub dataset_fingerprint: Fingerprint,
}

impl PredictionVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A trained encoder + head for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    pub encoder_spec: EncoderSpec,
    pub head: AffineHead,
    pub target: Target,
    pub score_range: ScoreRange,
    pub train_fingerprint: Fingerprint,
    pub backbone_weights: Option<Vec<u8>>,
}
