use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    AffineHead, Backbone, EncoderError, EncoderRegistry, EncoderSpec, FrozenSession,
    PredictionVector, RegressionSession, RegressorModel, TrainConfig,
};
use crate::dataset::{Dataset, Example};
use crate::fingerprint::{Fingerprint, Hasher};
use crate::metrics::pearson;
use crate::{ScoreRange, Target};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the dev predictions were constant.
    pub dev_pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_dev_pearson: Option<f64>,
    pub fine_tuned: bool,
}

impl TrainReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tdev_pearson\n");
        for e in &self.epochs {
            let r = e.dev_pearson.map(|r| r.to_string()).unwrap_or_else(|| "NA".into());
            out.push_str(&format!("{}\t{}\t{}\n", e.epoch, e.train_loss, r));
        }
        out
    }
}

fn is_degenerate(labels: impl Iterator<Item = f64>) -> bool {
    let mut it = labels;
    match it.next() {
        Some(first) => it.all(|v| v == first),
        None => true,
    }
}

pub(crate) fn train_fingerprint(
    train: &[Example],
    dev: &[Example],
    spec: &EncoderSpec,
    config: &TrainConfig,
    target: Target,
    range: ScoreRange,
) -> Fingerprint {
    let mut h = Hasher::new("regressor-train");
    spec.hash_into(&mut h);
    config.hash_into(&mut h);
    h.str(target.as_str()).f64(range.lo).f64(range.hi);
    for (tag, set) in [("train", train), ("dev", dev)] {
        h.str(tag).u64(set.len() as u64);
        for e in set {
            h.str(&e.text).f64(e.label);
        }
    }
    h.finish()
}

/// Trains one encoder + head for `target`, keeping the epoch with the best dev Pearson.
///
/// Backbones that can be fine-tuned are, unless `spec.frozen` is set; otherwise the
/// embeddings are computed once and only the head is optimised.
pub fn train_regressor(
    train: &[Example],
    dev: &[Example],
    spec: &EncoderSpec,
    config: &TrainConfig,
    target: Target,
    range: ScoreRange,
    registry: &EncoderRegistry,
) -> Result<(RegressorModel, TrainReport), EncoderError> {
    if train.is_empty() {
        return Err(EncoderError::EmptyExamples("train"));
    }
    if dev.is_empty() {
        return Err(EncoderError::EmptyExamples("dev"));
    }
    config.validate().map_err(EncoderError::InvalidSpec)?;
    if is_degenerate(train.iter().map(|e| e.label)) {
        return Err(EncoderError::DegenerateLabels("training"));
    }
    if is_degenerate(dev.iter().map(|e| e.label)) {
        return Err(EncoderError::DegenerateLabels("dev"));
    }
    let fingerprint = train_fingerprint(train, dev, spec, config, target, range);
    let backbone = registry.load(spec)?;
    let labels: Vec<f64> = train.iter().map(|e| e.label).collect();
    let dev_texts: Vec<String> = dev.iter().map(|e| e.text.clone()).collect();
    let dev_gold: Vec<f64> = dev.iter().map(|e| e.label).collect();
    let head = AffineHead::init(backbone.dim(), &labels);

    let tuned = if spec.frozen {
        None
    } else {
        backbone.fine_tune(train, &dev_texts, head.clone(), config).transpose()?
    };
    let fine_tuned = tuned.is_some();
    let mut session: Box<dyn RegressionSession> = match tuned {
        Some(s) => s,
        None => {
            if !spec.frozen {
                log::debug!("{}: no trainable backbone weights, training the head only", spec.name);
            }
            Box::new(FrozenSession::new(&backbone, train, &dev_texts, head, config)?)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, Option<f64>)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let loss = session.train_batch(batch)?;
            if !loss.is_finite() {
                return Err(EncoderError::NonFiniteLoss { epoch });
            }
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let raw = session.predict_dev()?;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFiniteLoss { epoch });
        }
        let clamped: Vec<f64> = raw.iter().map(|&v| range.clamp(v)).collect();
        let dev_pearson = pearson(&clamped, &dev_gold).ok();
        log::debug!(
            "{} [{target}] epoch {epoch}: loss {train_loss:.5} dev r {}",
            spec.name,
            dev_pearson.map(|r| format!("{r:.4}")).unwrap_or_else(|| "NA".into())
        );
        let improves = match best {
            None => true,
            Some((_, prev)) => {
                dev_pearson.unwrap_or(f64::NEG_INFINITY) > prev.unwrap_or(f64::NEG_INFINITY)
            }
        };
        if improves {
            session.mark_best()?;
            best = Some((epoch, dev_pearson));
        }
        epochs.push(EpochStats { epoch, train_loss, dev_pearson });
    }
    let (best_epoch, best_dev_pearson) = best.expect("at least one epoch");
    let weights = session.into_best()?;
    let model = RegressorModel {
        encoder_spec: spec.clone(),
        head: weights.head,
        target,
        score_range: range,
        train_fingerprint: fingerprint,
        backbone_weights: weights.backbone,
    };
    let report = TrainReport { epochs, best_epoch, best_dev_pearson, fine_tuned };
    Ok((model, report))
}

/// A model bound to a loaded backbone, ready for repeated prediction.
pub struct Predictor {
    model: RegressorModel,
    backbone: Arc<dyn Backbone>,
}

impl Predictor {
    pub fn new(model: RegressorModel, registry: &EncoderRegistry) -> Result<Self, EncoderError> {
        let base = registry.load(&model.encoder_spec)?;
        let backbone = match &model.backbone_weights {
            Some(blob) => base.with_tuned_weights(blob)?,
            None => base,
        };
        if backbone.dim() != model.head.dim() {
            return Err(EncoderError::Artifact(format!(
                "head expects {} inputs but `{}` produces {}",
                model.head.dim(),
                model.encoder_spec.name,
                backbone.dim()
            )));
        }
        Ok(Self { model, backbone })
    }

    pub fn model(&self) -> &RegressorModel {
        &self.model
    }

    /// Clamped predictions, one per text.
    pub fn predict_texts(&self, texts: &[String]) -> Result<Vec<f64>, EncoderError> {
        let x = self.backbone.encode(texts)?;
        let range = self.model.score_range;
        Ok(self.model.head.apply_rows(&x).into_iter().map(|v| range.clamp(v)).collect())
    }

    pub fn predict_dataset(
        &self,
        dataset: &Dataset,
        use_demographics: bool,
    ) -> Result<PredictionVector, EncoderError> {
        let values = self.predict_texts(&dataset.texts(use_demographics))?;
        Ok(PredictionVector {
            values,
            record_ids: dataset.record_ids(),
            source_model: self.model.encoder_spec.name.clone(),
            target: self.model.target,
            dataset_fingerprint: dataset.content_fingerprint(),
        })
    }
}

/// Predicts a bare list of texts. Record ids are positional and the dataset
/// fingerprint hashes the texts themselves.
pub fn predict(
    model: &RegressorModel,
    registry: &EncoderRegistry,
    texts: &[String],
) -> Result<PredictionVector, EncoderError> {
    let predictor = Predictor::new(model.clone(), registry)?;
    let values = predictor.predict_texts(texts)?;
    let mut h = Hasher::new("text-list");
    for t in texts {
        h.str(t);
    }
    Ok(PredictionVector {
        values,
        record_ids: (0..texts.len()).map(|i| i.to_string()).collect(),
        source_model: model.encoder_spec.name.clone(),
        target: model.target,
        dataset_fingerprint: h.finish(),
    })
}
