//! A RoBERTa encoder written against plain candle tensor ops so every parameter
//! is reachable by autograd (fine-tuning needs gradients through LayerNorm and
//! the attention softmax).

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Result, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The subset of a Hugging Face `config.json` the encoder needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobertaConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    #[serde(default = "one")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "one_u32")]
    pub pad_token_id: u32,
    #[serde(default = "default_act")]
    pub hidden_act: String,
    #[serde(default = "default_dropout")]
    pub hidden_dropout_prob: f64,
    #[serde(default = "default_dropout")]
    pub attention_probs_dropout_prob: f64,
    #[serde(default = "default_position_type")]
    pub position_embedding_type: String,
}

fn one() -> usize {
    1
}
fn one_u32() -> u32 {
    1
}
fn default_eps() -> f64 {
    1e-5
}
fn default_act() -> String {
    "gelu".into()
}
fn default_dropout() -> f64 {
    0.1
}
fn default_position_type() -> String {
    "absolute".into()
}

impl RobertaConfig {
    pub fn from_file(path: &Path) -> std::result::Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.num_attention_heads == 0 || self.hidden_size % self.num_attention_heads != 0 {
            return Err(format!(
                "hidden_size {} is not divisible by {} attention heads",
                self.hidden_size, self.num_attention_heads
            ));
        }
        if self.position_embedding_type != "absolute" {
            return Err(format!("unsupported position_embedding_type `{}`", self.position_embedding_type));
        }
        if activation(&self.hidden_act).is_none() {
            return Err(format!("unsupported hidden_act `{}`", self.hidden_act));
        }
        if self.max_sequence() < 2 {
            return Err("max_position_embeddings leaves no room for tokens".into());
        }
        for p in [self.hidden_dropout_prob, self.attention_probs_dropout_prob] {
            if !(0.0..1.0).contains(&p) {
                return Err(format!("dropout probability {p} outside [0, 1)"));
            }
        }
        Ok(())
    }

    /// Longest input (special tokens included) the position table can address;
    /// positions start after the padding index.
    pub fn max_sequence(&self) -> usize {
        self.max_position_embeddings.saturating_sub(self.pad_token_id as usize + 1)
    }

    /// Every parameter the encoder reads, with its shape, in checkpoint naming.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (h, i) = (self.hidden_size, self.intermediate_size);
        let mut out = vec![
            ("embeddings.word_embeddings.weight".to_string(), vec![self.vocab_size, h]),
            ("embeddings.position_embeddings.weight".to_string(), vec![self.max_position_embeddings, h]),
            ("embeddings.token_type_embeddings.weight".to_string(), vec![self.type_vocab_size, h]),
            ("embeddings.LayerNorm.weight".to_string(), vec![h]),
            ("embeddings.LayerNorm.bias".to_string(), vec![h]),
        ];
        for l in 0..self.num_hidden_layers {
            let p = format!("encoder.layer.{l}");
            for m in ["query", "key", "value"] {
                out.push((format!("{p}.attention.self.{m}.weight"), vec![h, h]));
                out.push((format!("{p}.attention.self.{m}.bias"), vec![h]));
            }
            out.push((format!("{p}.attention.output.dense.weight"), vec![h, h]));
            out.push((format!("{p}.attention.output.dense.bias"), vec![h]));
            out.push((format!("{p}.attention.output.LayerNorm.weight"), vec![h]));
            out.push((format!("{p}.attention.output.LayerNorm.bias"), vec![h]));
            out.push((format!("{p}.intermediate.dense.weight"), vec![i, h]));
            out.push((format!("{p}.intermediate.dense.bias"), vec![i]));
            out.push((format!("{p}.output.dense.weight"), vec![h, i]));
            out.push((format!("{p}.output.dense.bias"), vec![h]));
            out.push((format!("{p}.output.LayerNorm.weight"), vec![h]));
            out.push((format!("{p}.output.LayerNorm.bias"), vec![h]));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Act {
    GeluErf,
    GeluTanh,
    Relu,
}

fn activation(name: &str) -> Option<Act> {
    match name {
        "gelu" => Some(Act::GeluErf),
        "gelu_new" | "gelu_pytorch_tanh" => Some(Act::GeluTanh),
        "relu" => Some(Act::Relu),
        _ => None,
    }
}

/// Named parameter tensors in checkpoint naming (no `roberta.` prefix).
pub type Params = HashMap<String, Tensor>;

/// Maps checkpoint key spellings onto the names in [`RobertaConfig::parameter_shapes`]:
/// drops a task-model prefix and renames old-style LayerNorm `gamma`/`beta`.
pub fn normalize_key(key: &str) -> String {
    let key = key.strip_prefix("roberta.").unwrap_or(key);
    if let Some(stem) = key.strip_suffix(".gamma") {
        format!("{stem}.weight")
    } else if let Some(stem) = key.strip_suffix(".beta") {
        format!("{stem}.bias")
    } else {
        key.to_string()
    }
}

/// Keeps exactly the encoder parameters, checks their shapes and casts to `dtype`.
/// Extra entries (pooler, LM or classification heads) are ignored.
pub fn select_params(
    config: &RobertaConfig,
    raw: impl IntoIterator<Item = (String, Tensor)>,
    dtype: DType,
) -> std::result::Result<Params, String> {
    let mut by_name: HashMap<String, Tensor> = HashMap::new();
    for (k, t) in raw {
        by_name.insert(normalize_key(&k), t);
    }
    let mut out = Params::new();
    let mut missing = Vec::new();
    for (name, shape) in config.parameter_shapes() {
        match by_name.remove(&name) {
            None => missing.push(name),
            Some(t) if t.dims() != shape.as_slice() => {
                return Err(format!("{name}: expected shape {shape:?}, found {:?}", t.dims()));
            }
            Some(t) => {
                let t = t.to_dtype(dtype).map_err(|e| format!("{name}: {e}"))?;
                out.insert(name, t);
            }
        }
    }
    if !missing.is_empty() {
        let more = missing.len().saturating_sub(3);
        let shown = missing.iter().take(3).cloned().collect::<Vec<_>>().join(", ");
        let suffix = if more > 0 { format!(" (+{more} more)") } else { String::new() };
        return Err(format!("checkpoint lacks {shown}{suffix}"));
    }
    if !by_name.is_empty() {
        log::debug!("ignoring {} checkpoint tensors outside the encoder", by_name.len());
    }
    Ok(out)
}

/// Reads `model.safetensors`, falling back to `pytorch_model.bin`.
pub fn load_params(dir: &Path, config: &RobertaConfig, dtype: DType) -> std::result::Result<Params, String> {
    let st = dir.join("model.safetensors");
    let bin = dir.join("pytorch_model.bin");
    let raw: Vec<(String, Tensor)> = if st.exists() {
        candle_core::safetensors::load(&st, &Device::Cpu)
            .map_err(|e| format!("{}: {e}", st.display()))?
            .into_iter()
            .collect()
    } else if bin.exists() {
        candle_core::pickle::read_all(&bin).map_err(|e| format!("{}: {e}", bin.display()))?
    } else {
        return Err(format!("no model.safetensors or pytorch_model.bin in {}", dir.display()));
    };
    select_params(config, raw, dtype)
}

/// Padded token ids plus the attention mask for one forward pass.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub ids: Tensor,
    /// 1 for real tokens, 0 for padding; `[batch, len]` in the model dtype.
    pub mask: Tensor,
    pub lengths: Vec<usize>,
    positions: Tensor,
}

impl TokenBatch {
    pub fn new(seqs: &[Vec<u32>], pad_id: u32, dtype: DType) -> Result<Self> {
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let b = seqs.len();
        let mut ids = Vec::with_capacity(b * len);
        let mut mask = Vec::with_capacity(b * len);
        let mut pos = Vec::with_capacity(b * len);
        for s in seqs {
            // positions count real tokens from pad_id + 1; padding sits at pad_id
            for k in 0..len {
                match s.get(k) {
                    Some(&id) => {
                        ids.push(id);
                        mask.push(1f32);
                        pos.push(pad_id + 1 + k as u32);
                    }
                    None => {
                        ids.push(pad_id);
                        mask.push(0f32);
                        pos.push(pad_id);
                    }
                }
            }
        }
        let dev = Device::Cpu;
        Ok(Self {
            ids: Tensor::from_vec(ids, (b, len), &dev)?,
            mask: Tensor::from_vec(mask, (b, len), &dev)?.to_dtype(dtype)?,
            lengths: seqs.iter().map(Vec::len).collect(),
            positions: Tensor::from_vec(pos, (b, len), &dev)?,
        })
    }
}

/// Inverted dropout driven by a seeded generator, so training runs replay exactly.
#[derive(Debug, Clone)]
pub struct Dropout {
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn apply(&mut self, x: &Tensor, p: f64) -> Result<Tensor> {
        if p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep as f32 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        x * mask
    }
}

fn get<'a>(p: &'a Params, name: &str) -> Result<&'a Tensor> {
    p.get(name).ok_or_else(|| candle_core::Error::Msg(format!("missing parameter {name}")))
}

fn linear(x: &Tensor, p: &Params, name: &str) -> Result<Tensor> {
    let w = get(p, &format!("{name}.weight"))?;
    let b = get(p, &format!("{name}.bias"))?;
    x.broadcast_matmul(&w.t()?)?.broadcast_add(b)
}

fn layer_norm(x: &Tensor, p: &Params, name: &str, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    let xn = xc.broadcast_div(&(var + eps)?.sqrt()?)?;
    xn.broadcast_mul(get(p, &format!("{name}.weight"))?)?
        .broadcast_add(get(p, &format!("{name}.bias"))?)
}

fn softmax_last(x: &Tensor) -> Result<Tensor> {
    // the shift only guards exp against overflow; it carries no gradient
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    e.broadcast_div(&e.sum_keepdim(D::Minus1)?)
}

/// `x·Φ(x)` composed from `erf`, whose gradient is exact; the fused kernel's
/// backward pass rounds 1/√(2π) to six digits.
fn gelu_erf(x: &Tensor) -> Result<Tensor> {
    let cdf = ((x / std::f64::consts::SQRT_2)?.erf()? + 1.0)? * 0.5;
    x * cdf?
}

fn maybe_dropout(x: Tensor, dropout: &mut Option<&mut Dropout>, p: f64) -> Result<Tensor> {
    match dropout {
        Some(d) => d.apply(&x, p),
        None => Ok(x),
    }
}

/// Final-layer hidden states `[batch, len, hidden]`. Dropout is applied only when
/// a generator is passed.
pub fn forward(
    config: &RobertaConfig,
    params: &Params,
    batch: &TokenBatch,
    mut dropout: Option<&mut Dropout>,
) -> Result<Tensor> {
    let (b, l) = batch.ids.dims2()?;
    let h = config.hidden_size;
    let heads = config.num_attention_heads;
    let hd = h / heads;
    let act = activation(&config.hidden_act)
        .ok_or_else(|| candle_core::Error::Msg(format!("unsupported hidden_act {}", config.hidden_act)))?;
    let eps = config.layer_norm_eps;

    let word = get(params, "embeddings.word_embeddings.weight")?.index_select(&batch.ids.flatten_all()?, 0)?;
    let pos = get(params, "embeddings.position_embeddings.weight")?
        .index_select(&batch.positions.flatten_all()?, 0)?;
    let token_type = get(params, "embeddings.token_type_embeddings.weight")?.narrow(0, 0, 1)?;
    let emb = (word + pos)?.broadcast_add(&token_type)?.reshape((b, l, h))?;
    let mut x = layer_norm(&emb, params, "embeddings.LayerNorm", eps)?;
    x = maybe_dropout(x, &mut dropout, config.hidden_dropout_prob)?;

    let neg = (batch.mask.ones_like()? - &batch.mask)?.affine(-1e9, 0.0)?.reshape((b, 1, 1, l))?;
    let scale = 1.0 / (hd as f64).sqrt();
    for layer in 0..config.num_hidden_layers {
        let p = format!("encoder.layer.{layer}");
        let split = |t: Tensor| -> Result<Tensor> { t.reshape((b, l, heads, hd))?.transpose(1, 2)?.contiguous() };
        let q = split(linear(&x, params, &format!("{p}.attention.self.query"))?)?;
        let k = split(linear(&x, params, &format!("{p}.attention.self.key"))?)?;
        let v = split(linear(&x, params, &format!("{p}.attention.self.value"))?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?.broadcast_add(&neg)?;
        let probs = softmax_last(&scores)?;
        let probs = maybe_dropout(probs, &mut dropout, config.attention_probs_dropout_prob)?;
        let ctx = probs.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, l, h))?;
        let attn = linear(&ctx, params, &format!("{p}.attention.output.dense"))?;
        let attn = maybe_dropout(attn, &mut dropout, config.hidden_dropout_prob)?;
        let attn = layer_norm(&(attn + &x)?, params, &format!("{p}.attention.output.LayerNorm"), eps)?;

        let inner = linear(&attn, params, &format!("{p}.intermediate.dense"))?;
        let inner = match act {
            Act::GeluErf => gelu_erf(&inner)?,
            Act::GeluTanh => inner.gelu()?,
            Act::Relu => inner.relu()?,
        };
        let out = linear(&inner, params, &format!("{p}.output.dense"))?;
        let out = maybe_dropout(out, &mut dropout, config.hidden_dropout_prob)?;
        x = layer_norm(&(out + attn)?, params, &format!("{p}.output.LayerNorm"), eps)?;
    }
    Ok(x)
}
