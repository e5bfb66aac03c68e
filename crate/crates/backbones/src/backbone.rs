use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use affect_core::dataset::Example;
use affect_core::encoders::{
    pool, AffineHead, Backbone, EncoderError, EncoderSpec, Pooling, RegressionSession, TrainConfig,
    TunedWeights,
};
use candle_core::{DType, Device, IndexOp, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array2;

use crate::model::{forward, load_params, select_params, Dropout, Params, RobertaConfig, TokenBatch};
use crate::tokenize::TextTokenizer;

/// Texts per forward pass at inference time.
const ENCODE_BATCH: usize = 16;

fn backend(e: impl std::fmt::Display) -> EncoderError {
    EncoderError::Backend(e.to_string())
}

/// A RoBERTa checkpoint directory loaded for encoding and fine-tuning.
#[derive(Clone)]
pub struct RobertaBackbone {
    name: String,
    config: Arc<RobertaConfig>,
    tokenizer: Arc<TextTokenizer>,
    params: Arc<Params>,
    pooling: Pooling,
}

impl std::fmt::Debug for RobertaBackbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RobertaBackbone")
            .field("name", &self.name)
            .field("hidden", &self.config.hidden_size)
            .field("pooling", &self.pooling)
            .finish()
    }
}

impl RobertaBackbone {
    /// Loads `config.json`, the tokenizer files and the weights from `dir`.
    pub fn load(dir: &Path, spec: &EncoderSpec) -> Result<Self, EncoderError> {
        let fail = |reason: String| EncoderError::EncoderLoadFailure { name: spec.name.clone(), reason };
        if !dir.is_dir() {
            return Err(fail(format!("{} is not a directory", dir.display())));
        }
        let config = RobertaConfig::from_file(&dir.join("config.json")).map_err(fail)?;
        let limit = config.max_sequence();
        let max_tokens = if spec.max_tokens > limit {
            log::warn!("{}: max_tokens {} exceeds the model limit, using {limit}", spec.name, spec.max_tokens);
            limit
        } else {
            spec.max_tokens
        };
        let tokenizer = TextTokenizer::from_dir(dir, max_tokens).map_err(fail)?;
        if let Some(pad) = tokenizer.token_id("<pad>") {
            if pad != config.pad_token_id {
                return Err(fail(format!("tokenizer pads with {pad}, config says {}", config.pad_token_id)));
            }
        }
        let params = load_params(dir, &config, DType::F32).map_err(fail)?;
        Ok(Self {
            name: spec.name.clone(),
            config: Arc::new(config),
            tokenizer: Arc::new(tokenizer),
            params: Arc::new(params),
            pooling: spec.pooling,
        })
    }

    pub fn config(&self) -> &RobertaConfig {
        &self.config
    }

    pub fn tokenize(&self, texts: &[String]) -> Result<Vec<Vec<u32>>, EncoderError> {
        texts.iter().map(|t| self.tokenizer.encode(t).map_err(backend)).collect()
    }

    /// Same backbone, different weights (and optionally dtype); used by tests to
    /// run the forward pass in double precision.
    pub fn with_params(&self, params: Params) -> Result<Self, EncoderError> {
        let expected: HashSet<String> = self.config.parameter_shapes().into_iter().map(|(n, _)| n).collect();
        let found: HashSet<String> = params.keys().cloned().collect();
        if expected != found {
            return Err(EncoderError::Artifact(format!("{}: weight set does not match the model", self.name)));
        }
        Ok(Self { params: Arc::new(params), ..self.clone() })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    fn embed(&self, config: &RobertaConfig, params: &Params, seqs: &[Vec<u32>]) -> Result<Array2<f64>, EncoderError> {
        let h = config.hidden_size;
        let dtype = params.values().next().map(Tensor::dtype).unwrap_or(DType::F32);
        let mut out = Array2::<f64>::zeros((seqs.len(), h));
        for (c, chunk) in seqs.chunks(ENCODE_BATCH).enumerate() {
            let batch = TokenBatch::new(chunk, config.pad_token_id, dtype).map_err(backend)?;
            let hidden = forward(config, params, &batch, None).map_err(backend)?;
            let hidden: Vec<Vec<Vec<f64>>> =
                hidden.to_dtype(DType::F64).and_then(|t| t.to_vec3()).map_err(backend)?;
            for (i, (rows, &len)) in hidden.iter().zip(&batch.lengths).enumerate() {
                let tokens = Array2::from_shape_fn((len, h), |(r, k)| rows[r][k]);
                // without the SimCSE MLP, the sentence vector is the <s> state
                let pooled = pool(tokens.view(), None, self.pooling, Some(tokens.row(0)))?;
                out.row_mut(c * ENCODE_BATCH + i).assign(&pooled);
            }
        }
        Ok(out)
    }
}

impl Backbone for RobertaBackbone {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.config.hidden_size
    }

    fn encode(&self, texts: &[String]) -> Result<Array2<f64>, EncoderError> {
        if texts.is_empty() {
            return Err(EncoderError::NoTexts);
        }
        let seqs = self.tokenize(texts)?;
        self.embed(&self.config, &self.params, &seqs)
    }

    fn fine_tune(
        &self,
        train: &[Example],
        dev_texts: &[String],
        head: AffineHead,
        config: &TrainConfig,
    ) -> Option<Result<Box<dyn RegressionSession>, EncoderError>> {
        Some(
            RobertaSession::new(self.clone(), train, dev_texts, head, config)
                .map(|s| Box::new(s) as Box<dyn RegressionSession>),
        )
    }

    fn with_tuned_weights(&self, blob: &[u8]) -> Result<Arc<dyn Backbone>, EncoderError> {
        let raw = candle_core::safetensors::load_buffer(blob, &Device::Cpu)
            .map_err(|e| EncoderError::Artifact(format!("{}: unreadable weights: {e}", self.name)))?;
        let params = select_params(&self.config, raw, DType::F32)
            .map_err(|e| EncoderError::Artifact(format!("{}: {e}", self.name)))?;
        Ok(Arc::new(self.with_params(params)?))
    }
}

/// Serializes encoder weights as a safetensors buffer.
pub fn serialize_params(params: &[(String, Tensor)]) -> Result<Vec<u8>, EncoderError> {
    safetensors::serialize(params.iter().map(|(n, t)| (n.as_str(), t)), None).map_err(backend)
}

fn no_decay(name: &str) -> bool {
    name.ends_with(".bias") || name.contains("LayerNorm")
}

struct Checkpoint {
    params: Vec<(String, Tensor)>,
    head: AffineHead,
}

/// Full fine-tuning of encoder and head with AdamW (no decay on biases and
/// LayerNorm), optional global-norm gradient clipping and seeded dropout.
pub struct RobertaSession {
    base: RobertaBackbone,
    vars: Vec<(String, Var)>,
    head_w: Var,
    head_b: Var,
    decayed: AdamW,
    plain: AdamW,
    clip: Option<f64>,
    dropout: Dropout,
    train: Vec<Vec<u32>>,
    labels: Vec<f64>,
    dev: Vec<Vec<u32>>,
    best: Option<Checkpoint>,
}

impl RobertaSession {
    pub fn new(
        base: RobertaBackbone,
        train: &[Example],
        dev_texts: &[String],
        head: AffineHead,
        config: &TrainConfig,
    ) -> Result<Self, EncoderError> {
        if head.dim() != base.config.hidden_size {
            return Err(EncoderError::InvalidSpec(format!(
                "head has {} inputs, encoder width is {}",
                head.dim(),
                base.config.hidden_size
            )));
        }
        let dtype = DType::F32;
        let mut names: Vec<&String> = base.params.keys().collect();
        names.sort();
        let mut vars = Vec::with_capacity(names.len());
        for n in names {
            let t = base.params[n].to_dtype(dtype).map_err(backend)?;
            vars.push((n.clone(), Var::from_tensor(&t).map_err(backend)?));
        }
        let w: Vec<f32> = head.weights.iter().map(|&v| v as f32).collect();
        let head_w = Var::from_vec(w, (head.dim(), 1), &Device::Cpu).map_err(backend)?;
        let head_b = Var::from_vec(vec![head.bias as f32], 1, &Device::Cpu).map_err(backend)?;

        let mut decay_vars = vec![head_w.clone()];
        let mut plain_vars = vec![head_b.clone()];
        for (n, v) in &vars {
            if no_decay(n) {
                plain_vars.push(v.clone());
            } else {
                decay_vars.push(v.clone());
            }
        }
        let opt = |wd: f64| ParamsAdamW { lr: config.learning_rate, weight_decay: wd, ..Default::default() };
        let decayed = AdamW::new(decay_vars, opt(config.weight_decay)).map_err(backend)?;
        let plain = AdamW::new(plain_vars, opt(0.0)).map_err(backend)?;

        let texts: Vec<String> = train.iter().map(|e| e.text.clone()).collect();
        Ok(Self {
            train: base.tokenize(&texts)?,
            labels: train.iter().map(|e| e.label).collect(),
            dev: base.tokenize(dev_texts)?,
            base,
            vars,
            head_w,
            head_b,
            decayed,
            plain,
            clip: config.grad_clip,
            dropout: Dropout::new(config.seed ^ 0x5eed_d80b),
            best: None,
        })
    }

    fn current_params(&self) -> Params {
        self.vars.iter().map(|(n, v)| (n.clone(), v.as_tensor().clone())).collect()
    }

    fn current_head(&self) -> Result<AffineHead, EncoderError> {
        let w: Vec<f32> = self.head_w.as_tensor().flatten_all().and_then(|t| t.to_vec1()).map_err(backend)?;
        let b: Vec<f32> = self.head_b.as_tensor().to_vec1().map_err(backend)?;
        Ok(AffineHead { weights: w.into_iter().map(f64::from).collect(), bias: f64::from(b[0]) })
    }

    fn pooled(&self, hidden: &Tensor, mask: &Tensor) -> candle_core::Result<Tensor> {
        match self.base.pooling {
            Pooling::ClsToken | Pooling::NativeSentence => hidden.i((.., 0, ..)),
            Pooling::MeanTokens => {
                let m = mask.unsqueeze(2)?;
                hidden.broadcast_mul(&m)?.sum(1)?.broadcast_div(&m.sum(1)?)
            }
        }
    }

    fn step(&mut self, batch: &[usize]) -> candle_core::Result<f64> {
        let seqs: Vec<Vec<u32>> = batch.iter().map(|&i| self.train[i].clone()).collect();
        let y: Vec<f32> = batch.iter().map(|&i| self.labels[i] as f32).collect();
        let tb = TokenBatch::new(&seqs, self.base.config.pad_token_id, DType::F32)?;
        let params = self.current_params();
        let hidden = forward(&self.base.config, &params, &tb, Some(&mut self.dropout))?;
        let pooled = self.pooled(&hidden, &tb.mask)?;
        let pred = pooled.matmul(self.head_w.as_tensor())?.squeeze(1)?.broadcast_add(self.head_b.as_tensor())?;
        let y = Tensor::from_vec(y, batch.len(), &Device::Cpu)?;
        let loss = (pred - y)?.sqr()?.mean_all()?;
        let value = f64::from(loss.to_scalar::<f32>()?);
        let mut grads = loss.backward()?;
        if let Some(clip) = self.clip {
            let all: Vec<&Var> =
                self.vars.iter().map(|(_, v)| v).chain([&self.head_w, &self.head_b]).collect();
            let mut sq = 0f64;
            for v in &all {
                if let Some(g) = grads.get(v) {
                    sq += f64::from(g.sqr()?.sum_all()?.to_scalar::<f32>()?);
                }
            }
            let norm = sq.sqrt();
            if norm > clip {
                let scale = clip / (norm + 1e-6);
                for v in &all {
                    if let Some(g) = grads.remove(v) {
                        grads.insert(v, (g * scale)?);
                    }
                }
            }
        }
        self.decayed.step(&grads)?;
        self.plain.step(&grads)?;
        Ok(value)
    }
}

impl RegressionSession for RobertaSession {
    fn train_batch(&mut self, batch: &[usize]) -> Result<f64, EncoderError> {
        self.step(batch).map_err(backend)
    }

    fn predict_dev(&mut self) -> Result<Vec<f64>, EncoderError> {
        let params: Params =
            self.vars.iter().map(|(n, v)| (n.clone(), v.as_tensor().detach())).collect();
        let x = self.base.embed(&self.base.config, &params, &self.dev)?;
        Ok(self.current_head()?.apply_rows(&x))
    }

    fn mark_best(&mut self) -> Result<(), EncoderError> {
        let params = self
            .vars
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect::<candle_core::Result<Vec<_>>>()
            .map_err(backend)?;
        self.best = Some(Checkpoint { params, head: self.current_head()? });
        Ok(())
    }

    fn into_best(self: Box<Self>) -> Result<TunedWeights, EncoderError> {
        let best = match self.best {
            Some(b) => b,
            None => Checkpoint {
                params: self.vars.iter().map(|(n, v)| (n.clone(), v.as_tensor().clone())).collect(),
                head: self.current_head()?,
            },
        };
        Ok(TunedWeights { head: best.head, backbone: Some(serialize_params(&best.params)?) })
    }
}

/// Where a named checkpoint lives: `<root>/<name>` (names keep their `org/` part).
pub fn checkpoint_dir(root: &Path, name: &str) -> PathBuf {
    name.split('/').fold(root.to_path_buf(), |p, part| p.join(part))
}
