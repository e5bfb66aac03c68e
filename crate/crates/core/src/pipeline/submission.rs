use std::path::{Path, PathBuf};

use super::run::load_ensemble_test;
use super::{io_err, PipelineError, RunConfig};
use crate::encoders::PredictionVector;
use crate::ensemble::EnsembleError;
use crate::Target;

/// Column layout of the submission file. The default (empathy first, no header)
/// follows the shared-task convention; neither choice is fixed by the task data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubmissionFormat {
    pub columns: [Target; 2],
    pub header: bool,
}

impl Default for SubmissionFormat {
    fn default() -> Self {
        Self { columns: [Target::Empathy, Target::Distress], header: false }
    }
}

/// Writes the shared-task file: one `empathy<TAB>distress` line per test essay,
/// in test order, six decimals, no header.
pub fn write_submission(
    empathy: &PredictionVector,
    distress: &PredictionVector,
    path: &Path,
) -> Result<(), PipelineError> {
    write_submission_with(empathy, distress, path, &SubmissionFormat::default())
}

pub fn write_submission_with(
    empathy: &PredictionVector,
    distress: &PredictionVector,
    path: &Path,
    format: &SubmissionFormat,
) -> Result<(), PipelineError> {
    for (p, want) in [(empathy, Target::Empathy), (distress, Target::Distress)] {
        if p.target != want {
            return Err(EnsembleError::TargetMismatch {
                model: p.source_model.clone(),
                expected: want,
                found: p.target,
            }
            .into());
        }
    }
    if empathy.len() != distress.len() {
        return Err(PipelineError::LengthMismatch { empathy: empathy.len(), distress: distress.len() });
    }
    if empathy.dataset_fingerprint != distress.dataset_fingerprint
        || empathy.record_ids != distress.record_ids
    {
        return Err(PipelineError::FingerprintMismatch);
    }
    let mut body = String::with_capacity(empathy.len() * 18 + 20);
    if format.header {
        body.push_str(&format!("{}\t{}\n", format.columns[0], format.columns[1]));
    }
    let column = |t: Target| if t == Target::Empathy { &empathy.values } else { &distress.values };
    let (a, b) = (column(format.columns[0]), column(format.columns[1]));
    for (x, y) in a.iter().zip(b) {
        body.push_str(&format!("{x:.6}\t{y:.6}\n"));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| io_err(path, e))
}

/// Parses a default-layout submission file back into (empathy, distress) pairs.
pub fn read_submission(path: &Path) -> Result<Vec<(f64, f64)>, PipelineError> {
    read_submission_with(path, &SubmissionFormat::default())
}

pub fn read_submission_with(
    path: &Path,
    format: &SubmissionFormat,
) -> Result<Vec<(f64, f64)>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |message: String| PipelineError::MalformedPredictions { path: path.to_path_buf(), message };
    let swap = format.columns[0] == Target::Distress;
    text.lines()
        .enumerate()
        .skip(usize::from(format.header))
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            if fields.len() != 2 {
                return Err(bad(format!("line {}: expected 2 columns, found {}", i + 1, fields.len())));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("line {}: `{s}` is not a number", i + 1)))
            };
            let (a, b) = (num(fields[0])?, num(fields[1])?);
            Ok(if swap { (b, a) } else { (a, b) })
        })
        .collect()
}

/// Writes the submission for `combiner` (the configured one when `None`).
pub fn run_submit(config: &RunConfig, combiner: Option<&str>) -> Result<PathBuf, PipelineError> {
    let name = combiner.unwrap_or(&config.submission_combiner);
    if !config.combiners.iter().any(|c| c.name == name) {
        return Err(PipelineError::ConfigInvalid(format!("no combiner named `{name}` in the config")));
    }
    let (emp, dis) = load_ensemble_test(config, name)?;
    write_submission_with(&emp, &dis, &config.submission_path, &config.submission_format)?;
    Ok(config.submission_path.clone())
}
