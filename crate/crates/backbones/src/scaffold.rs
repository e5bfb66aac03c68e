//! Randomly initialised checkpoints for smoke runs when real weights are absent.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::RobertaConfig;

/// Byte-level vocabulary: `<s> <pad> </s> <unk>`, the 256 byte symbols, `<mask>`.
pub fn byte_vocab() -> BTreeMap<String, u32> {
    let mut vocab = BTreeMap::new();
    for (i, t) in ["<s>", "<pad>", "</s>", "<unk>"].iter().enumerate() {
        vocab.insert(t.to_string(), i as u32);
    }
    let mut printable: Vec<u32> = (u32::from(b'!')..=u32::from(b'~')).collect();
    printable.extend(0xA1..=0xAC);
    printable.extend(0xAE..=0xFF);
    // GPT-2 byte symbols: printable bytes stand for themselves, the rest map to 256+
    let mut symbols: Vec<u32> = printable.clone();
    let mut shifted = 256;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            symbols.push(shifted);
            shifted += 1;
        }
    }
    for cp in symbols {
        let next = vocab.len() as u32;
        vocab.insert(char::from_u32(cp).expect("valid code point").to_string(), next);
    }
    let next = vocab.len() as u32;
    vocab.insert("<mask>".into(), next);
    vocab
}

/// A small config sized for the byte vocabulary.
pub fn tiny_config(hidden: usize, layers: usize) -> RobertaConfig {
    RobertaConfig {
        vocab_size: byte_vocab().len(),
        hidden_size: hidden,
        num_hidden_layers: layers,
        num_attention_heads: 2,
        intermediate_size: 2 * hidden,
        max_position_embeddings: 130,
        type_vocab_size: 1,
        layer_norm_eps: 1e-5,
        pad_token_id: 1,
        hidden_act: "gelu".into(),
        hidden_dropout_prob: 0.1,
        attention_probs_dropout_prob: 0.1,
        position_embedding_type: "absolute".into(),
    }
}

/// Writes `config.json`, `model.safetensors`, `vocab.json` and an empty
/// `merges.txt` to `dir`. Matrices are uniform in ±0.035 (std ≈ 0.02), LayerNorm
/// gains start at 1 and biases at 0; everything is a function of `seed`.
pub fn write_random_checkpoint(dir: &Path, config: &RobertaConfig, seed: u64) -> std::io::Result<()> {
    let err = |e: String| std::io::Error::other(e);
    config.validate().map_err(err)?;
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for (name, shape) in config.parameter_shapes() {
        let n: usize = shape.iter().product();
        let values: Vec<f32> = if name.ends_with("LayerNorm.weight") {
            vec![1.0; n]
        } else if name.ends_with(".bias") {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.random_range(-0.035f32..0.035)).collect()
        };
        let t = Tensor::from_vec(values, shape, &Device::Cpu).map_err(|e| err(e.to_string()))?;
        tensors.push((name, t));
    }
    let blob = crate::serialize_params(&tensors).map_err(|e| err(e.to_string()))?;
    std::fs::write(dir.join("model.safetensors"), blob)?;
    let cfg = serde_json::to_string_pretty(config).map_err(|e| err(e.to_string()))?;
    std::fs::write(dir.join("config.json"), cfg)?;
    let vocab = serde_json::to_string(&byte_vocab()).map_err(|e| err(e.to_string()))?;
    std::fs::write(dir.join("vocab.json"), vocab)?;
    std::fs::write(dir.join("merges.txt"), "#version: 0.2\n")?;
    Ok(())
}
