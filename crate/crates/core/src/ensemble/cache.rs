//! Prediction cache files: `record_id<TAB>prediction` with a header row, plus a
//! `.meta` key=value sidecar naming the model, target and dataset fingerprint.

use std::path::{Path, PathBuf};

use super::EnsembleError;
use crate::encoders::PredictionVector;
use crate::fingerprint::Fingerprint;
use crate::Target;

pub const CACHE_HEADER: &str = "record_id\tprediction";

#[derive(Debug, Clone, PartialEq)]
pub struct CacheMeta {
    pub source_model: String,
    pub target: Target,
    pub dataset_fingerprint: Fingerprint,
    /// Fingerprint of whatever produced the file (model or combiner).
    pub producer_fingerprint: Option<Fingerprint>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn cache_err(path: &Path, message: impl Into<String>) -> EnsembleError {
    EnsembleError::Cache { path: path.display().to_string(), message: message.into() }
}

pub fn write_prediction_cache(
    path: &Path,
    pred: &PredictionVector,
    producer: Option<&Fingerprint>,
) -> Result<(), EnsembleError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| cache_err(path, e.to_string()))?;
    }
    let mut body = String::with_capacity(pred.len() * 24);
    body.push_str(CACHE_HEADER);
    body.push('\n');
    for (id, v) in pred.record_ids.iter().zip(&pred.values) {
        body.push_str(&format!("{id}\t{v}\n"));
    }
    std::fs::write(path, body).map_err(|e| cache_err(path, e.to_string()))?;
    let mut meta = format!(
        "source_model={}\ntarget={}\ndataset_fingerprint={}\nrows={}\n",
        pred.source_model,
        pred.target,
        pred.dataset_fingerprint,
        pred.len()
    );
    if let Some(f) = producer {
        meta.push_str(&format!("producer_fingerprint={f}\n"));
    }
    std::fs::write(meta_path(path), meta).map_err(|e| cache_err(path, e.to_string()))
}

fn read_meta(path: &Path) -> Result<CacheMeta, EnsembleError> {
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| cache_err(&mp, e.to_string()))?;
    let get = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .map(str::to_string)
    };
    let source_model = get("source_model").ok_or_else(|| cache_err(&mp, "missing source_model"))?;
    let target = get("target")
        .ok_or_else(|| cache_err(&mp, "missing target"))?
        .parse()
        .map_err(|e: String| cache_err(&mp, e))?;
    let dataset_fingerprint = Fingerprint::from_hex(
        get("dataset_fingerprint").ok_or_else(|| cache_err(&mp, "missing dataset_fingerprint"))?,
    );
    Ok(CacheMeta {
        source_model,
        target,
        dataset_fingerprint,
        producer_fingerprint: get("producer_fingerprint").map(Fingerprint::from_hex),
    })
}

pub fn read_prediction_cache(path: &Path) -> Result<(PredictionVector, CacheMeta), EnsembleError> {
    let meta = read_meta(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| cache_err(path, e.to_string()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(CACHE_HEADER) {
        return Err(cache_err(path, "missing `record_id\tprediction` header"));
    }
    let mut record_ids = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (id, v) = line
            .split_once('\t')
            .ok_or_else(|| cache_err(path, format!("row {i}: expected two columns")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| cache_err(path, format!("row {i}: `{v}` is not a number")))?;
        record_ids.push(id.to_string());
        values.push(v);
    }
    let pred = PredictionVector {
        values,
        record_ids,
        source_model: meta.source_model.clone(),
        target: meta.target,
        dataset_fingerprint: meta.dataset_fingerprint.clone(),
    };
    Ok((pred, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds/toy__empathy.tsv");
        let pred = PredictionVector {
            values: vec![1.0, 0.1 + 0.2, 6.999999999],
            record_ids: vec!["a".into(), "b".into(), "c".into()],
            source_model: "toy".into(),
            target: Target::Empathy,
            dataset_fingerprint: Fingerprint::from_hex("ff00"),
        };
        write_prediction_cache(&path, &pred, Some(&Fingerprint::from_hex("aa"))).unwrap();
        let (back, meta) = read_prediction_cache(&path).unwrap();
        assert_eq!(back, pred);
        assert_eq!(meta.producer_fingerprint, Some(Fingerprint::from_hex("aa")));
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.starts_with("record_id\tprediction\na\t1\n"));
    }

    #[test]
    fn missing_sidecar_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tsv");
        std::fs::write(&path, "record_id\tprediction\na\t1\n").unwrap();
        assert!(matches!(read_prediction_cache(&path), Err(EnsembleError::Cache { .. })));
    }
}
