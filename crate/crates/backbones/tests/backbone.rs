use std::path::{Path, PathBuf};

use affect_backbones::model::normalize_key;
use affect_backbones::scaffold::{byte_vocab, tiny_config, write_random_checkpoint};
use affect_backbones::{registry, serialize_params, RobertaBackbone, LOCAL_PREFIX, REFERENCE_ENCODERS};
use affect_core::dataset::Example;
use affect_core::encoders::{
    train_regressor, Backbone, EncoderError, EncoderSpec, Pooling, Predictor, TrainConfig,
};
use affect_core::metrics::pearson;
use affect_core::{ScoreRange, Target};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny-roberta")
}

fn local(dir: &Path, pooling: Pooling) -> EncoderSpec {
    EncoderSpec { max_tokens: 48, ..EncoderSpec::new(format!("{LOCAL_PREFIX}{}", dir.display()), pooling) }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn renamed_and_prefixed_checkpoints_load_identically() {
    let tmp = tempfile::tempdir().unwrap();
    for f in ["config.json", "tokenizer.json"] {
        std::fs::copy(fixture().join(f), tmp.path().join(f)).unwrap();
    }
    let raw = candle_core::safetensors::load(fixture().join("model.safetensors"), &candle_core::Device::Cpu).unwrap();
    assert!(raw.keys().all(|k| k.starts_with("roberta.") || k.starts_with("lm_head.")));
    // old-style LayerNorm names, no task prefix
    let renamed: Vec<(String, candle_core::Tensor)> = raw
        .into_iter()
        .map(|(k, t)| {
            let k = normalize_key(&k);
            let k = k.replace("LayerNorm.weight", "LayerNorm.gamma").replace("LayerNorm.bias", "LayerNorm.beta");
            (k, t)
        })
        .collect();
    std::fs::write(tmp.path().join("model.safetensors"), serialize_params(&renamed).unwrap()).unwrap();

    let texts = strings(&["so sad", "the news today is awful"]);
    let a = RobertaBackbone::load(&fixture(), &local(&fixture(), Pooling::MeanTokens)).unwrap();
    let b = RobertaBackbone::load(tmp.path(), &local(tmp.path(), Pooling::MeanTokens)).unwrap();
    assert_eq!(a.encode(&texts).unwrap(), b.encode(&texts).unwrap());
}

#[test]
fn missing_pieces_are_load_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = registry();
    let err = reg.load(&local(&tmp.path().join("nope"), Pooling::ClsToken)).err().expect("expected an error");
    assert!(matches!(err, EncoderError::EncoderLoadFailure { .. }), "{err}");

    std::fs::copy(fixture().join("config.json"), tmp.path().join("config.json")).unwrap();
    std::fs::copy(fixture().join("tokenizer.json"), tmp.path().join("tokenizer.json")).unwrap();
    let err = reg.load(&local(tmp.path(), Pooling::ClsToken)).err().expect("expected an error");
    assert!(err.to_string().contains("model.safetensors"), "{err}");

    // a checkpoint that lacks encoder tensors names them
    let raw = candle_core::safetensors::load(fixture().join("model.safetensors"), &candle_core::Device::Cpu).unwrap();
    let partial: Vec<_> = raw.into_iter().filter(|(k, _)| !k.contains("layer.1.")).collect();
    std::fs::write(tmp.path().join("model.safetensors"), serialize_params(&partial).unwrap()).unwrap();
    let err = reg.load(&local(tmp.path(), Pooling::ClsToken)).err().expect("expected an error");
    assert!(err.to_string().contains("encoder.layer.1."), "{err}");
}

#[test]
fn reference_names_are_registered() {
    let reg = registry();
    for (name, sentence) in REFERENCE_ENCODERS {
        let native = EncoderSpec::new(name, Pooling::NativeSentence);
        assert_eq!(reg.validate(&native).is_ok(), sentence, "{name}");
        reg.validate(&EncoderSpec::new(name, Pooling::ClsToken)).unwrap();
    }
    assert!(reg.validate(&EncoderSpec::toy()).is_ok());
}

#[test]
fn encoding_is_deterministic_and_batch_independent() {
    let bb = RobertaBackbone::load(&fixture(), &local(&fixture(), Pooling::MeanTokens)).unwrap();
    let texts = strings(&["a", "a much longer essay about how sad the story was", "fine"]);
    let all = bb.encode(&texts).unwrap();
    assert_eq!(all, bb.encode(&texts).unwrap());
    let alone = bb.encode(&texts[..1]).unwrap();
    for (x, y) in all.row(0).iter().zip(alone.row(0)) {
        assert!((x - y).abs() < 1e-5);
    }
    assert!(matches!(bb.encode(&[]), Err(EncoderError::NoTexts)));
}

#[test]
fn long_inputs_are_truncated_to_max_tokens() {
    let long = vec!["word ".repeat(200)];
    let spec = EncoderSpec { max_tokens: 16, ..local(&fixture(), Pooling::ClsToken) };
    let ids = RobertaBackbone::load(&fixture(), &spec).unwrap().tokenize(&long).unwrap();
    assert_eq!(ids[0].len(), 16);
    assert_eq!((ids[0][0], ids[0][15]), (0, 2));
    // the fixture's position table only addresses 38 tokens
    let bb = RobertaBackbone::load(&fixture(), &local(&fixture(), Pooling::ClsToken)).unwrap();
    assert_eq!(bb.tokenize(&long).unwrap()[0].len(), 38);
    assert_eq!(bb.encode(&long).unwrap().nrows(), 1);
}

#[test]
fn scaffold_vocabulary_matches_the_byte_level_convention() {
    let fixture_vocab: std::collections::BTreeMap<String, u32> =
        serde_json::from_str(&std::fs::read_to_string(fixture().join("vocab.json")).unwrap()).unwrap();
    let ours = byte_vocab();
    assert_eq!(ours.len(), 261);
    for (tok, id) in &ours {
        if tok != "<mask>" {
            assert_eq!(fixture_vocab.get(tok), Some(id), "{tok}");
        }
    }
}

/// Labels follow how often the essay says "sad"; a tiny random encoder can pick
/// that up once it is fine-tuned.
fn corpus(n: usize, offset: usize) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let k = (i * 7 + offset) % 5;
            let text = format!("{}today {}", "sad ".repeat(k), ["was", "is", "felt"][(i + offset) % 3]);
            Example { text, label: 1.0 + 1.5 * k as f64 }
        })
        .collect()
}

#[test]
fn fine_tuning_updates_every_tensor_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("tiny");
    write_random_checkpoint(&dir, &tiny_config(16, 2), 11).unwrap();
    let spec = local(&dir, Pooling::MeanTokens);
    let reg = registry();
    let (train, dev) = (corpus(40, 0), corpus(15, 3));
    let config = TrainConfig {
        learning_rate: 3e-3,
        epochs: 6,
        batch_size: 8,
        weight_decay: 0.01,
        grad_clip: Some(1.0),
        ..Default::default()
    };
    let range = ScoreRange::default();
    let (model, report) = train_regressor(&train, &dev, &spec, &config, Target::Empathy, range, &reg).unwrap();
    assert!(report.fine_tuned);
    let best = report.best_dev_pearson.unwrap();
    assert!(best > 0.8, "dev r {best}");

    // every encoder tensor moved away from its initial value
    let base = RobertaBackbone::load(&dir, &spec).unwrap();
    let blob = model.backbone_weights.clone().unwrap();
    let tuned = candle_core::safetensors::load_buffer(&blob, &candle_core::Device::Cpu).unwrap();
    assert_eq!(tuned.len(), base.params().len());
    for (name, t0) in base.params() {
        let t1 = &tuned[name];
        let diff = (t1 - t0).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff > 0.0, "{name} never updated");
    }

    // reloading the artifact reproduces the checkpointed dev score exactly
    let predictor = Predictor::new(model.clone(), &reg).unwrap();
    let dev_texts: Vec<String> = dev.iter().map(|e| e.text.clone()).collect();
    let preds: Vec<f64> = predictor.predict_texts(&dev_texts).unwrap();
    let gold: Vec<f64> = dev.iter().map(|e| e.label).collect();
    assert_eq!(pearson(&preds, &gold).unwrap(), best);

    // same seed, same bytes
    let (again, _) = train_regressor(&train, &dev, &spec, &config, Target::Empathy, range, &reg).unwrap();
    assert_eq!(again, model);
}

#[test]
fn frozen_spec_trains_only_the_head() {
    let spec = EncoderSpec { frozen: true, ..local(&fixture(), Pooling::ClsToken) };
    let config = TrainConfig { learning_rate: 0.05, epochs: 3, ..Default::default() };
    let (model, report) =
        train_regressor(&corpus(20, 0), &corpus(10, 1), &spec, &config, Target::Distress, ScoreRange::default(), &registry())
            .unwrap();
    assert!(!report.fine_tuned);
    assert!(model.backbone_weights.is_none());
}

#[test]
fn tuned_weights_must_fit_the_model() {
    let bb = RobertaBackbone::load(&fixture(), &local(&fixture(), Pooling::ClsToken)).unwrap();
    assert!(matches!(bb.with_tuned_weights(b"not safetensors"), Err(EncoderError::Artifact(_))));
    let one: Vec<_> = bb.params().iter().take(1).map(|(k, t)| (k.clone(), t.clone())).collect();
    let err = bb.with_tuned_weights(&serialize_params(&one).unwrap()).err().expect("expected an error");
    assert!(matches!(err, EncoderError::Artifact(_)), "{err}");
}
