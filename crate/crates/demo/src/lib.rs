//! WebAssembly bindings for `www/index.html`.
//!
//! Each binding is a thin wrapper over a plain function that returns
//! `Result<String, String>` (JSON on success), so the logic is testable natively.

use affect_core::dataset::{parse_essay_table, to_examples, SchemaConfig, Split};
use affect_core::encoders::{
    train_regressor, EncoderRegistry, EncoderSpec, PredictionVector, Predictor, TrainConfig,
};
use affect_core::ensemble::{assemble_matrix, combine, fit_combiner, CombinerKind};
use affect_core::metrics::{evaluate, pearson};
use affect_core::synthetic::{generate, SyntheticSpec};
use affect_core::{Fingerprint, ScoreRange, Target};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Rows of whitespace- or comma-separated numbers; blank lines and `#` comments
/// are skipped. Every row must have the same width.
pub fn parse_rows(text: &str) -> Result<Vec<Vec<f64>>, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .map(|f| f.parse::<f64>().map_err(|_| format!("line {}: `{f}` is not a number", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format!("line {}: {} columns, expected {}", i + 1, row.len(), first.len()));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("no numbers given".into());
    }
    Ok(rows)
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

fn two_columns(text: &str, what: &str) -> Result<Vec<Vec<f64>>, String> {
    let rows = parse_rows(text).map_err(|e| format!("{what}: {e}"))?;
    if rows[0].len() != 2 {
        return Err(format!("{what}: expected `empathy distress` per line, got {} columns", rows[0].len()));
    }
    Ok(rows)
}

/// Scores `empathy distress` predictions against gold rows of the same shape.
pub fn score_text(predictions: &str, gold: &str) -> Result<String, String> {
    let pred = two_columns(predictions, "predictions")?;
    let gold = two_columns(gold, "gold")?;
    if pred.len() != gold.len() {
        return Err(format!("{} prediction rows but {} gold rows", pred.len(), gold.len()));
    }
    let r = evaluate(&column(&pred, 0), &column(&pred, 1), &column(&gold, 0), &column(&gold, 1))
        .map_err(|e| e.to_string())?;
    Ok(json!({
        "n": r.n_examples,
        "empathy": r.pearson_empathy,
        "distress": r.pearson_distress,
        "average": r.averaged_pearson,
    })
    .to_string())
}

/// Fits every combiner on the first half of the rows (one column per base model)
/// and reports Pearson on the second half, next to each base model alone.
pub fn compare_combiners(matrix: &str, gold: &str, seed: u64) -> Result<String, String> {
    let rows = parse_rows(matrix).map_err(|e| format!("predictions: {e}"))?;
    let gold = parse_rows(gold).map_err(|e| format!("gold: {e}"))?;
    if gold[0].len() != 1 || gold.len() != rows.len() {
        return Err(format!("gold needs one value per prediction row ({} rows)", rows.len()));
    }
    let gold = column(&gold, 0);
    let n = rows.len();
    if n < 6 {
        return Err("need at least 6 rows: half to fit, half to evaluate".into());
    }
    let cut = n / 2;
    let matrix_of = |range: std::ops::Range<usize>| {
        let preds: Vec<PredictionVector> = (0..rows[0].len())
            .map(|j| PredictionVector {
                values: rows[range.clone()].iter().map(|r| r[j]).collect(),
                record_ids: range.clone().map(|i| format!("row{i}")).collect(),
                source_model: format!("model {}", j + 1),
                target: Target::Empathy,
                dataset_fingerprint: Fingerprint::from_hex("00"),
            })
            .collect();
        assemble_matrix(&preds).map_err(|e| e.to_string())
    };
    let (fit_m, eval_m) = (matrix_of(0..cut)?, matrix_of(cut..n)?);
    let (fit_gold, eval_gold) = gold.split_at(cut);
    let range = ScoreRange::default();

    let mut entries: Vec<Value> = Vec::new();
    for (j, name) in eval_m.model_names.iter().enumerate() {
        let r = pearson(&eval_m.values.column(j).to_vec(), eval_gold).ok();
        entries.push(json!({ "name": name, "combiner": false, "pearson": r }));
    }
    for kind in CombinerKind::all_defaults() {
        let entry = match fit_combiner(&kind, &fit_m, fit_gold, seed, range) {
            Ok(fitted) => {
                let out = combine(&fitted, &eval_m).map_err(|e| e.to_string())?;
                json!({ "name": kind.name(), "combiner": true, "pearson": pearson(&out.values, eval_gold).ok() })
            }
            Err(e) => json!({ "name": kind.name(), "combiner": true, "error": e.to_string() }),
        };
        entries.push(entry);
    }
    Ok(json!({ "fit_rows": cut, "eval_rows": n - cut, "results": entries }).to_string())
}

/// Empathy and distress regressors on the hashed n-gram encoder, trained on a
/// generated corpus in which "sad" drives empathy and "afraid" drives distress.
pub struct ToyScorer {
    empathy: Predictor,
    distress: Predictor,
    report: Value,
}

impl ToyScorer {
    pub fn train(seed: u64) -> Result<Self, String> {
        let corpus = generate(&SyntheticSpec { seed, ..Default::default() });
        let (schema, range) = (SchemaConfig::default(), ScoreRange::default());
        let train = parse_essay_table(&corpus.train, Split::Train, &schema, range).map_err(|e| e.to_string())?;
        let dev = parse_essay_table(&corpus.dev, Split::Dev, &schema, range).map_err(|e| e.to_string())?;
        let registry = EncoderRegistry::builtin();
        let spec = EncoderSpec { frozen: true, ..EncoderSpec::toy() };
        let config = TrainConfig { learning_rate: 0.05, epochs: 30, seed, ..Default::default() };
        let mut predictors = Vec::new();
        let mut report = serde_json::Map::new();
        for target in Target::ALL {
            let tr = to_examples(&train, target).map_err(|e| e.to_string())?;
            let dv = to_examples(&dev, target).map_err(|e| e.to_string())?;
            let (model, rep) =
                train_regressor(&tr, &dv, &spec, &config, target, range, &registry).map_err(|e| e.to_string())?;
            report.insert(target.to_string(), json!(rep.best_dev_pearson));
            predictors.push(Predictor::new(model, &registry).map_err(|e| e.to_string())?);
        }
        let distress = predictors.pop().expect("two targets");
        let empathy = predictors.pop().expect("two targets");
        report.insert("train".into(), json!(train.len()));
        report.insert("dev".into(), json!(dev.len()));
        Ok(Self { empathy, distress, report: Value::Object(report) })
    }

    /// Dev Pearson per target and split sizes, as JSON.
    pub fn report(&self) -> String {
        self.report.to_string()
    }

    /// `[empathy, distress]` for one essay.
    pub fn score(&self, essay: &str) -> Result<[f64; 2], String> {
        if essay.trim().is_empty() {
            return Err("write an essay first".into());
        }
        let text = [essay.to_string()];
        let e = self.empathy.predict_texts(&text).map_err(|e| e.to_string())?;
        let d = self.distress.predict_texts(&text).map_err(|e| e.to_string())?;
        Ok([e[0], d[0]])
    }
}

#[wasm_bindgen(js_name = score)]
pub fn js_score(predictions: &str, gold: &str) -> Result<String, JsError> {
    score_text(predictions, gold).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = compareCombiners)]
pub fn js_compare_combiners(matrix: &str, gold: &str, seed: u32) -> Result<String, JsError> {
    compare_combiners(matrix, gold, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = ToyScorer)]
pub struct JsToyScorer(ToyScorer);

#[wasm_bindgen(js_class = ToyScorer)]
impl JsToyScorer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<JsToyScorer, JsError> {
        ToyScorer::train(u64::from(seed)).map(JsToyScorer).map_err(|e| JsError::new(&e))
    }

    pub fn report(&self) -> String {
        self.0.report()
    }

    pub fn score(&self, essay: &str) -> Result<Vec<f64>, JsError> {
        self.0.score(essay).map(|s| s.to_vec()).map_err(|e| JsError::new(&e))
    }
}
