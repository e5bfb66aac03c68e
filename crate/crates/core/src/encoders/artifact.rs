//! On-disk layout of a trained model:
//!
//! ```text
//! <dir>/model.json          head weights, encoder spec, target, range, fingerprint
//! <dir>/model.meta          key=value sidecar for humans and cache checks
//! <dir>/train_report.tsv    per-epoch loss and dev Pearson
//! <dir>/backbone.safetensors  fine-tuned backbone weights, when present
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AffineHead, EncoderError, EncoderSpec, RegressorModel, TrainReport};
use crate::fingerprint::Fingerprint;
use crate::{ScoreRange, Target};

pub const MODEL_BLOB: &str = "model.json";
pub const MODEL_META: &str = "model.meta";
const REPORT_TSV: &str = "train_report.tsv";
const BACKBONE_WEIGHTS: &str = "backbone.safetensors";

#[derive(Serialize, Deserialize)]
struct Blob {
    encoder_spec: EncoderSpec,
    head: AffineHead,
    target: Target,
    score_range: ScoreRange,
    train_fingerprint: Fingerprint,
    fine_tuned_backbone: bool,
    report: TrainReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: RegressorModel,
    pub report: TrainReport,
}

fn io_err(what: &str, path: &Path, e: impl std::fmt::Display) -> EncoderError {
    EncoderError::Artifact(format!("{what} {}: {e}", path.display()))
}

pub fn save_model(dir: &Path, model: &RegressorModel, report: &TrainReport) -> Result<(), EncoderError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err("create", dir, e))?;
    let blob = Blob {
        encoder_spec: model.encoder_spec.clone(),
        head: model.head.clone(),
        target: model.target,
        score_range: model.score_range,
        train_fingerprint: model.train_fingerprint.clone(),
        fine_tuned_backbone: model.backbone_weights.is_some(),
        report: report.clone(),
    };
    let json = serde_json::to_string(&blob).map_err(|e| io_err("serialize", dir, e))?;
    if let Some(weights) = &model.backbone_weights {
        let p = dir.join(BACKBONE_WEIGHTS);
        std::fs::write(&p, weights).map_err(|e| io_err("write", &p, e))?;
    }
    let p = dir.join(REPORT_TSV);
    std::fs::write(&p, report.to_tsv()).map_err(|e| io_err("write", &p, e))?;
    let p = dir.join(MODEL_BLOB);
    std::fs::write(&p, json).map_err(|e| io_err("write", &p, e))?;
    // written last: its presence marks a complete artifact
    let meta = format!(
        "encoder={}\npooling={}\nmax_tokens={}\nfrozen={}\ntarget={}\nscore_range={},{}\nfingerprint={}\nbest_epoch={}\nbest_dev_pearson={}\nfine_tuned_backbone={}\n",
        model.encoder_spec.name,
        model.encoder_spec.pooling.as_str(),
        model.encoder_spec.max_tokens,
        model.encoder_spec.frozen,
        model.target,
        model.score_range.lo,
        model.score_range.hi,
        model.train_fingerprint,
        report.best_epoch,
        report.best_dev_pearson.map(|r| r.to_string()).unwrap_or_else(|| "NA".into()),
        model.backbone_weights.is_some(),
    );
    let p = dir.join(MODEL_META);
    std::fs::write(&p, meta).map_err(|e| io_err("write", &p, e))?;
    Ok(())
}

/// Reads the fingerprint from the sidecar without loading weights.
pub fn stored_fingerprint(dir: &Path) -> Option<Fingerprint> {
    let meta = std::fs::read_to_string(dir.join(MODEL_META)).ok()?;
    meta.lines()
        .find_map(|l| l.strip_prefix("fingerprint="))
        .map(|f| Fingerprint::from_hex(f.trim()))
}

pub fn load_model(dir: &Path) -> Result<ModelArtifact, EncoderError> {
    let p = dir.join(MODEL_BLOB);
    let json = std::fs::read_to_string(&p).map_err(|e| io_err("read", &p, e))?;
    let blob: Blob = serde_json::from_str(&json).map_err(|e| io_err("parse", &p, e))?;
    let backbone_weights = if blob.fine_tuned_backbone {
        let p = dir.join(BACKBONE_WEIGHTS);
        Some(std::fs::read(&p).map_err(|e| io_err("read", &p, e))?)
    } else {
        None
    };
    Ok(ModelArtifact {
        model: RegressorModel {
            encoder_spec: blob.encoder_spec,
            head: blob.head,
            target: blob.target,
            score_range: blob.score_range,
            train_fingerprint: blob.train_fingerprint,
            backbone_weights,
        },
        report: blob.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EpochStats;

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let model = RegressorModel {
            encoder_spec: EncoderSpec::toy(),
            head: AffineHead { weights: vec![0.1, -0.25, 1.0 / 3.0], bias: 3.9 },
            target: Target::Distress,
            score_range: ScoreRange::default(),
            train_fingerprint: Fingerprint::from_hex("abc123"),
            backbone_weights: Some(vec![1, 2, 3]),
        };
        let report = TrainReport {
            epochs: vec![EpochStats { epoch: 1, train_loss: 0.5, dev_pearson: Some(0.7) }],
            best_epoch: 1,
            best_dev_pearson: Some(0.7),
            fine_tuned: true,
        };
        save_model(dir.path(), &model, &report).unwrap();
        let loaded = load_model(dir.path()).unwrap();
        assert_eq!(loaded.model, model);
        assert_eq!(loaded.report, report);
        assert_eq!(stored_fingerprint(dir.path()), Some(Fingerprint::from_hex("abc123")));
    }
}
