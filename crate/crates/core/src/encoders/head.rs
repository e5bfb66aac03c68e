use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{Backbone, EncoderError, RegressionSession, TrainConfig, TunedWeights};
use crate::dataset::Example;

/// `y = w·x + b`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl AffineHead {
    /// Zero weights, bias at the label mean.
    pub fn init(dim: usize, labels: &[f64]) -> Self {
        let bias = if labels.is_empty() { 0.0 } else { labels.iter().sum::<f64>() / labels.len() as f64 };
        Self { weights: vec![0.0; dim], bias }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn apply(&self, x: ArrayView1<'_, f64>) -> f64 {
        debug_assert_eq!(x.len(), self.weights.len());
        x.iter().zip(&self.weights).fold(self.bias, |acc, (a, w)| acc + a * w)
    }

    pub fn apply_rows(&self, x: &Array2<f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| self.apply(r)).collect()
    }
}

/// Decoupled-weight-decay Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// `decay[i]` selects which parameters receive weight decay.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], decay: impl Fn(usize) -> bool) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            if decay(i) {
                params[i] -= self.lr * self.weight_decay * params[i];
            }
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scales `grads` in place so their L2 norm is at most `max_norm`.
pub(crate) fn clip_grad_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
}

/// Head-only training on embeddings computed once up front.
pub struct FrozenSession {
    train_x: Array2<f64>,
    train_y: Array1<f64>,
    dev_x: Array2<f64>,
    head: AffineHead,
    best: AffineHead,
    opt: AdamW,
    grad_clip: Option<f64>,
}

impl FrozenSession {
    pub fn new(
        backbone: &Arc<dyn Backbone>,
        train: &[Example],
        dev_texts: &[String],
        head: AffineHead,
        config: &TrainConfig,
    ) -> Result<Self, EncoderError> {
        let texts: Vec<String> = train.iter().map(|e| e.text.clone()).collect();
        let train_x = backbone.encode(&texts)?;
        let dev_x = backbone.encode(dev_texts)?;
        if train_x.ncols() != head.dim() {
            return Err(EncoderError::Backend(format!(
                "head expects {} inputs, encoder produced {}",
                head.dim(),
                train_x.ncols()
            )));
        }
        let opt = AdamW::new(head.dim() + 1, config.learning_rate, config.weight_decay);
        Ok(Self {
            train_x,
            train_y: train.iter().map(|e| e.label).collect(),
            dev_x,
            best: head.clone(),
            head,
            opt,
            grad_clip: config.grad_clip,
        })
    }
}

impl RegressionSession for FrozenSession {
    fn train_batch(&mut self, batch: &[usize]) -> Result<f64, EncoderError> {
        let dim = self.head.dim();
        let mut grads = vec![0.0; dim + 1];
        let mut loss = 0.0;
        let scale = 2.0 / batch.len() as f64;
        for &i in batch {
            let x = self.train_x.row(i);
            let residual = self.head.apply(x) - self.train_y[i];
            loss += residual * residual;
            for (g, xv) in grads[..dim].iter_mut().zip(x.iter()) {
                *g += scale * residual * xv;
            }
            grads[dim] += scale * residual;
        }
        if let Some(c) = self.grad_clip {
            clip_grad_norm(&mut grads, c);
        }
        let mut params = self.head.weights.clone();
        params.push(self.head.bias);
        self.opt.update(&mut params, &grads, |i| i < dim);
        self.head.bias = params.pop().expect("bias slot");
        self.head.weights = params;
        Ok(loss / batch.len() as f64)
    }

    fn predict_dev(&mut self) -> Result<Vec<f64>, EncoderError> {
        Ok(self.head.apply_rows(&self.dev_x))
    }

    fn mark_best(&mut self) -> Result<(), EncoderError> {
        self.best = self.head.clone();
        Ok(())
    }

    fn into_best(self: Box<Self>) -> Result<TunedWeights, EncoderError> {
        Ok(TunedWeights { head: self.best, backbone: None })
    }
}
