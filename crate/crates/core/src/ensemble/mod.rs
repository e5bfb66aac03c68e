//! Stacked ensembling of base-model predictions.
//!
//! Base models emit one [`PredictionVector`] per split and target. The vectors are
//! assembled column-wise into a [`PredictionMatrix`]; a combiner is fitted on the
//! dev matrix against dev gold and then applied to the test matrix. Fitting takes
//! no test data at all.

mod cache;
mod gbt;
mod linear;
mod svr;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoders::PredictionVector;
use crate::fingerprint::{Fingerprint, Hasher};
use crate::{ScoreRange, Target};

pub use cache::{meta_path, read_prediction_cache, write_prediction_cache, CacheMeta, CACHE_HEADER};
pub use gbt::{GbtModel, GbtParams};
pub use linear::LinearModel;
pub use svr::{SvrModel, SvrParams};

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("no prediction vectors to assemble")]
    NoPredictions,
    #[error("shape mismatch: `{model}` has {found} rows, expected {expected}")]
    ShapeMismatch { model: String, expected: usize, found: usize },
    #[error("target mismatch: `{model}` predicts {found}, expected {expected}")]
    TargetMismatch { model: String, expected: Target, found: Target },
    #[error("`{model}` was computed on a different dataset")]
    FingerprintMismatch { model: String },
    #[error("record ids of `{model}` differ from the first column")]
    RecordMismatch { model: String },
    #[error("duplicate model column `{0}`")]
    DuplicateModel(String),
    #[error("non-finite prediction in column `{model}` row {row}")]
    NonFinite { model: String, row: usize },
    #[error("gold has {found} values for {expected} rows")]
    GoldLength { expected: usize, found: usize },
    #[error("dev gold has zero variance; {0} cannot be fitted")]
    DegenerateGold(&'static str),
    #[error("columns {found:?} differ from fit-time columns {expected:?}")]
    ColumnMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("unknown combiner kind `{0}`")]
    UnknownKind(String),
    #[error("combiner `{kind}` has no hyperparameter `{key}`")]
    UnknownHyper { kind: &'static str, key: String },
    #[error("combiner `{kind}`: {message}")]
    InvalidHyper { kind: &'static str, message: String },
    #[error("cache file {path}: {message}")]
    Cache { path: String, message: String },
}

/// n_examples × n_models predictions for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub values: Array2<f64>,
    pub model_names: Vec<String>,
    pub record_ids: Vec<String>,
    pub target: Target,
    pub dataset_fingerprint: Fingerprint,
}

impl PredictionMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_models(&self) -> usize {
        self.values.ncols()
    }
}

/// Column j of the result is `predictions[j]`.
pub fn assemble_matrix(predictions: &[PredictionVector]) -> Result<PredictionMatrix, EnsembleError> {
    let first = predictions.first().ok_or(EnsembleError::NoPredictions)?;
    let n = first.len();
    let mut names: Vec<String> = Vec::with_capacity(predictions.len());
    for p in predictions {
        if p.len() != n {
            return Err(EnsembleError::ShapeMismatch {
                model: p.source_model.clone(),
                expected: n,
                found: p.len(),
            });
        }
        if p.target != first.target {
            return Err(EnsembleError::TargetMismatch {
                model: p.source_model.clone(),
                expected: first.target,
                found: p.target,
            });
        }
        if p.dataset_fingerprint != first.dataset_fingerprint {
            return Err(EnsembleError::FingerprintMismatch { model: p.source_model.clone() });
        }
        if p.record_ids != first.record_ids {
            return Err(EnsembleError::RecordMismatch { model: p.source_model.clone() });
        }
        if names.contains(&p.source_model) {
            return Err(EnsembleError::DuplicateModel(p.source_model.clone()));
        }
        if let Some(row) = p.values.iter().position(|v| !v.is_finite()) {
            return Err(EnsembleError::NonFinite { model: p.source_model.clone(), row });
        }
        names.push(p.source_model.clone());
    }
    let values = Array2::from_shape_fn((n, predictions.len()), |(i, j)| predictions[j].values[i]);
    Ok(PredictionMatrix {
        values,
        model_names: names,
        record_ids: first.record_ids.clone(),
        target: first.target,
        dataset_fingerprint: first.dataset_fingerprint.clone(),
    })
}

/// The four combiners and their hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum CombinerKind {
    Mean,
    LinearRegression,
    Svr(SvrParams),
    GradientBoostedTrees(GbtParams),
}

impl CombinerKind {
    pub const NAMES: [&'static str; 4] = ["mean", "linear_regression", "svr", "gradient_boosted_trees"];

    pub fn name(&self) -> &'static str {
        match self {
            CombinerKind::Mean => "mean",
            CombinerKind::LinearRegression => "linear_regression",
            CombinerKind::Svr(_) => "svr",
            CombinerKind::GradientBoostedTrees(_) => "gradient_boosted_trees",
        }
    }

    /// Defaults for every kind, in canonical order.
    pub fn all_defaults() -> Vec<CombinerKind> {
        vec![
            CombinerKind::Mean,
            CombinerKind::LinearRegression,
            CombinerKind::Svr(SvrParams::default()),
            CombinerKind::GradientBoostedTrees(GbtParams::default()),
        ]
    }

    /// Builds a kind from its name and a hyperparameter map; unknown keys are rejected.
    pub fn from_hyper(kind: &str, hyper: &BTreeMap<String, f64>) -> Result<Self, EnsembleError> {
        let reject = |kind: &'static str| -> Result<(), EnsembleError> {
            match hyper.keys().next() {
                Some(key) => Err(EnsembleError::UnknownHyper { kind, key: key.clone() }),
                None => Ok(()),
            }
        };
        match kind {
            "mean" => reject("mean").map(|_| CombinerKind::Mean),
            "linear_regression" | "linear" => {
                reject("linear_regression").map(|_| CombinerKind::LinearRegression)
            }
            "svr" => SvrParams::from_hyper(hyper).map(CombinerKind::Svr),
            "gradient_boosted_trees" | "gbt" | "xgboost" => {
                GbtParams::from_hyper(hyper).map(CombinerKind::GradientBoostedTrees)
            }
            other => Err(EnsembleError::UnknownKind(other.to_string())),
        }
    }

    pub fn hyper(&self) -> BTreeMap<String, f64> {
        match self {
            CombinerKind::Mean | CombinerKind::LinearRegression => BTreeMap::new(),
            CombinerKind::Svr(p) => p.to_hyper(),
            CombinerKind::GradientBoostedTrees(p) => p.to_hyper(),
        }
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())?;
        let hyper = self.hyper();
        if !hyper.is_empty() {
            let parts: Vec<String> = hyper.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(f, "({})", parts.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedState {
    Mean,
    LinearRegression(LinearModel),
    Svr(SvrModel),
    GradientBoostedTrees(GbtModel),
}

/// An immutable fitted combiner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCombiner {
    pub kind_name: String,
    pub hyper: BTreeMap<String, f64>,
    pub state: FittedState,
    pub model_names: Vec<String>,
    pub target: Target,
    pub score_range: ScoreRange,
    pub seed: u64,
    pub fit_fingerprint: Fingerprint,
}

fn fit_fingerprint(
    kind: &CombinerKind,
    dev: &PredictionMatrix,
    gold: &[f64],
    seed: u64,
    range: ScoreRange,
) -> Fingerprint {
    let mut h = Hasher::new("combiner-fit");
    h.str(kind.name());
    for (k, v) in kind.hyper() {
        h.str(&k).f64(v);
    }
    h.u64(seed).f64(range.lo).f64(range.hi).str(dev.target.as_str());
    for name in &dev.model_names {
        h.str(name);
    }
    h.u64(dev.n_rows() as u64);
    for v in dev.values.iter() {
        h.f64(*v);
    }
    h.f64s(gold);
    h.finish()
}

fn has_variance(gold: &[f64]) -> bool {
    gold.iter().any(|&g| g != gold[0])
}

/// Fits `kind` on dev predictions against dev gold.
pub fn fit_combiner(
    kind: &CombinerKind,
    dev: &PredictionMatrix,
    dev_gold: &[f64],
    seed: u64,
    range: ScoreRange,
) -> Result<FittedCombiner, EnsembleError> {
    if dev.n_rows() != dev_gold.len() {
        return Err(EnsembleError::GoldLength { expected: dev.n_rows(), found: dev_gold.len() });
    }
    let trainable = !matches!(kind, CombinerKind::Mean);
    if trainable && (dev_gold.is_empty() || !has_variance(dev_gold)) {
        return Err(EnsembleError::DegenerateGold(kind.name()));
    }
    let state = match kind {
        CombinerKind::Mean => FittedState::Mean,
        CombinerKind::LinearRegression => {
            FittedState::LinearRegression(LinearModel::fit(&dev.values, dev_gold))
        }
        CombinerKind::Svr(p) => FittedState::Svr(SvrModel::fit(&dev.values, dev_gold, p)?),
        CombinerKind::GradientBoostedTrees(p) => {
            FittedState::GradientBoostedTrees(GbtModel::fit(&dev.values, dev_gold, p, seed)?)
        }
    };
    Ok(FittedCombiner {
        kind_name: kind.name().to_string(),
        hyper: kind.hyper(),
        state,
        model_names: dev.model_names.clone(),
        target: dev.target,
        score_range: range,
        seed,
        fit_fingerprint: fit_fingerprint(kind, dev, dev_gold, seed, range),
    })
}

/// Row mean with a fixed left-to-right summation order.
pub fn row_mean(row: &[f64]) -> f64 {
    let mut sum = 0.0;
    for v in row {
        sum += v;
    }
    sum / row.len() as f64
}

impl FittedCombiner {
    /// Unclamped combiner output for one row.
    pub fn apply_row(&self, row: &[f64]) -> f64 {
        match &self.state {
            FittedState::Mean => row_mean(row),
            FittedState::LinearRegression(m) => m.predict(row),
            FittedState::Svr(m) => m.predict(row),
            FittedState::GradientBoostedTrees(m) => m.predict(row),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("combiner state serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// key=value summary written next to the JSON state.
    pub fn meta_sidecar(&self) -> String {
        let mut out = format!(
            "kind={}\ntarget={}\nseed={}\nfit_fingerprint={}\nmodels={}\nscore_range={},{}\n",
            self.kind_name,
            self.target,
            self.seed,
            self.fit_fingerprint,
            self.model_names.join(","),
            self.score_range.lo,
            self.score_range.hi
        );
        for (k, v) in &self.hyper {
            out.push_str(&format!("hyper.{k}={v}\n"));
        }
        out
    }
}

/// Applies a fitted combiner to a matrix with the fit-time columns, clamping to
/// the score range.
pub fn combine(
    fitted: &FittedCombiner,
    matrix: &PredictionMatrix,
) -> Result<PredictionVector, EnsembleError> {
    if matrix.model_names != fitted.model_names {
        return Err(EnsembleError::ColumnMismatch {
            expected: fitted.model_names.clone(),
            found: matrix.model_names.clone(),
        });
    }
    if matrix.target != fitted.target {
        return Err(EnsembleError::TargetMismatch {
            model: fitted.kind_name.clone(),
            expected: fitted.target,
            found: matrix.target,
        });
    }
    let values = matrix
        .values
        .rows()
        .into_iter()
        .map(|r| {
            let row: Vec<f64> = r.to_vec();
            fitted.score_range.clamp(fitted.apply_row(&row))
        })
        .collect();
    Ok(PredictionVector {
        values,
        record_ids: matrix.record_ids.clone(),
        source_model: format!("ensemble:{}", fitted.kind_name),
        target: matrix.target,
        dataset_fingerprint: matrix.dataset_fingerprint.clone(),
    })
}
