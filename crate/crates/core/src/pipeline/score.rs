use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::submission::{read_submission_with, SubmissionFormat};
use super::PipelineError;
use crate::dataset::{Dataset, SchemaConfig, Split};
use crate::metrics::{evaluate_run, EvalReport};
use crate::{ScoreRange, Target};

/// Predictions for one target as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionColumn {
    /// Present when every row carries a record id.
    pub ids: Option<Vec<String>>,
    pub values: Vec<f64>,
}

/// Reads `value` rows or `record_id<TAB>value` rows, with or without a header.
pub fn read_prediction_column(path: &Path) -> Result<PredictionColumn, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| super::io_err(path, e))?;
    let bad = |message: String| PipelineError::MalformedPredictions { path: path.to_path_buf(), message };
    let mut ids: Vec<String> = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let last = fields[fields.len() - 1].trim();
        let value: f64 = match last.parse() {
            Ok(v) => v,
            Err(_) if i == 0 => continue, // header
            Err(_) => return Err(bad(format!("line {}: `{last}` is not a number", i + 1))),
        };
        match (fields.len(), width) {
            (n, Some(w)) if n != w => {
                return Err(bad(format!("line {}: {n} columns, earlier rows have {w}", i + 1)))
            }
            (1, _) | (2, _) => width = Some(fields.len()),
            (n, _) => return Err(bad(format!("line {}: expected 1 or 2 columns, found {n}", i + 1))),
        }
        if !value.is_finite() {
            return Err(bad(format!("line {}: non-finite prediction", i + 1)));
        }
        if fields.len() == 2 {
            ids.push(fields[0].to_string());
        }
        values.push(value);
    }
    Ok(PredictionColumn { ids: (width == Some(2)).then_some(ids), values })
}

fn first_five(items: &[&str]) -> String {
    let shown: Vec<&str> = items.iter().take(5).copied().collect();
    let more = items.len().saturating_sub(5);
    if more > 0 {
        format!("{} (+{more} more)", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

/// Puts predictions into gold order: by record id when ids are present,
/// positionally otherwise.
fn align(col: &PredictionColumn, gold: &Dataset, target: Target) -> Result<Vec<f64>, PipelineError> {
    let Some(ids) = &col.ids else {
        if col.values.len() != gold.len() {
            return Err(PipelineError::Alignment(format!(
                "{target}: {} predictions for {} gold records",
                col.values.len(),
                gold.len()
            )));
        }
        return Ok(col.values.clone());
    };
    let mut by_id: HashMap<&str, f64> = HashMap::with_capacity(ids.len());
    for (id, v) in ids.iter().zip(&col.values) {
        if by_id.insert(id, *v).is_some() {
            return Err(PipelineError::Alignment(format!("{target}: duplicate prediction id `{id}`")));
        }
    }
    let gold_ids: HashSet<&str> = gold.records.iter().map(|r| r.record_id.as_str()).collect();
    let missing: Vec<&str> = gold
        .records
        .iter()
        .map(|r| r.record_id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    let extra: Vec<&str> = ids.iter().map(String::as_str).filter(|id| !gold_ids.contains(id)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("no prediction for {}", first_five(&missing)));
        }
        if !extra.is_empty() {
            parts.push(format!("unknown ids {}", first_five(&extra)));
        }
        return Err(PipelineError::Alignment(format!("{target}: {}", parts.join("; "))));
    }
    Ok(gold.records.iter().map(|r| by_id[r.record_id.as_str()]).collect())
}

fn finish(
    run_id: &str,
    emp: &[f64],
    dis: &[f64],
    gold: &Dataset,
    log: Option<&Path>,
) -> Result<EvalReport, PipelineError> {
    let report = evaluate_run(run_id, emp, dis, &gold.gold(Target::Empathy)?, &gold.gold(Target::Distress)?)?;
    if let Some(log) = log {
        report.append_to_log(log).map_err(|e| super::io_err(log, e))?;
    }
    Ok(report)
}

/// Scores per-target prediction files against a gold table and optionally
/// appends the report to a results log.
#[allow(clippy::too_many_arguments)]
pub fn run_score(
    pred_empathy: &Path,
    pred_distress: &Path,
    gold: &Path,
    schema: &SchemaConfig,
    range: ScoreRange,
    run_id: &str,
    log: Option<&Path>,
) -> Result<EvalReport, PipelineError> {
    let gold = Dataset::load(gold, Split::Test, schema, range)?;
    let emp = align(&read_prediction_column(pred_empathy)?, &gold, Target::Empathy)?;
    let dis = align(&read_prediction_column(pred_distress)?, &gold, Target::Distress)?;
    finish(run_id, &emp, &dis, &gold, log)
}

/// Scores a two-column submission file (positional) against a gold table.
#[allow(clippy::too_many_arguments)]
pub fn score_submission(
    submission: &Path,
    format: &SubmissionFormat,
    gold: &Path,
    schema: &SchemaConfig,
    range: ScoreRange,
    run_id: &str,
    log: Option<&Path>,
) -> Result<EvalReport, PipelineError> {
    let gold = Dataset::load(gold, Split::Test, schema, range)?;
    let rows = read_submission_with(submission, format)?;
    if rows.len() != gold.len() {
        return Err(PipelineError::Alignment(format!(
            "{} submission rows for {} gold records",
            rows.len(),
            gold.len()
        )));
    }
    let emp: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let dis: Vec<f64> = rows.iter().map(|r| r.1).collect();
    finish(run_id, &emp, &dis, &gold, log)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLD: &str = "essay_id\tessay\tempathy\tdistress\na\tx y\t1\t2\nb\tx z\t3\t3\nc\ty z\t5\t7\n";

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn id_aligned_predictions_are_reordered() {
        let d = tempfile::tempdir().unwrap();
        let gold = write(d.path(), "gold.tsv", GOLD);
        let emp = write(d.path(), "e.tsv", "record_id\tprediction\nc\t5\na\t1\nb\t3\n");
        let dis = write(d.path(), "d.tsv", "2\n3\n7\n");
        let log = d.path().join("results.log");
        let r = run_score(&emp, &dis, &gold, &SchemaConfig::default(), ScoreRange::default(), "t", Some(&log))
            .unwrap();
        assert!((r.pearson_empathy - 1.0).abs() < 1e-12);
        assert!((r.averaged_pearson - 1.0).abs() < 1e-12);
        let logged = EvalReport::parse_log(&std::fs::read_to_string(log).unwrap());
        assert_eq!(logged, vec![r]);
    }

    #[test]
    fn mismatched_ids_are_listed() {
        let d = tempfile::tempdir().unwrap();
        let gold = write(d.path(), "gold.tsv", GOLD);
        let emp = write(d.path(), "e.tsv", "a\t1\nb\t3\nzz\t5\n");
        let err = run_score(&emp, &emp, &gold, &SchemaConfig::default(), ScoreRange::default(), "t", None)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("no prediction for c") && msg.contains("unknown ids zz"), "{msg}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn positional_length_mismatch() {
        let d = tempfile::tempdir().unwrap();
        let gold = write(d.path(), "gold.tsv", GOLD);
        let p = write(d.path(), "p.tsv", "1\n2\n");
        let err = run_score(&p, &p, &gold, &SchemaConfig::default(), ScoreRange::default(), "t", None)
            .unwrap_err();
        assert!(matches!(err, PipelineError::Alignment(_)));
    }

    #[test]
    fn constant_predictions_are_a_metric_error() {
        let d = tempfile::tempdir().unwrap();
        let gold = write(d.path(), "gold.tsv", GOLD);
        let p = write(d.path(), "p.tsv", "4\n4\n4\n");
        let err = run_score(&p, &p, &gold, &SchemaConfig::default(), ScoreRange::default(), "t", None)
            .unwrap_err();
        assert_eq!(err.exit_code(), 5);
    }

    #[test]
    fn garbage_rows_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "p.tsv", "1\nabc\n");
        assert!(matches!(read_prediction_column(&p), Err(PipelineError::MalformedPredictions { .. })));
        let p = write(d.path(), "q.tsv", "1\na\t2\n");
        assert!(read_prediction_column(&p).is_err());
    }
}
