//! Pearson's r, the empathy/distress average used for ranking, and the
//! append-only results log.

use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 points, got {n}")]
    TooFew { n: usize },
    #[error("{which} has zero variance; correlation is undefined")]
    ZeroVariance { which: &'static str },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("correlation {value} outside [-1, 1]")]
    OutOfRange { value: f64 },
}

/// Two-pass Pearson correlation: means first, then centred moments.
///
/// Constant inputs are an error rather than a silent zero.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch { left: x.len(), right: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Err(MetricError::TooFew { n });
    }
    if let Some(index) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite { index: index % n });
    }
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricError::ZeroVariance { which: "x" });
    }
    if syy == 0.0 {
        return Err(MetricError::ZeroVariance { which: "y" });
    }
    // sqrt of the product is exact when x == y; fall back if it over/underflows
    let prod = sxx * syy;
    let denom = if prod.is_normal() { prod.sqrt() } else { sxx.sqrt() * syy.sqrt() };
    let r = sxy / denom;
    Ok(r.clamp(-1.0, 1.0))
}

/// The official ranking metric: arithmetic mean of the two per-target correlations.
pub fn averaged_pearson(r_empathy: f64, r_distress: f64) -> Result<f64, MetricError> {
    for value in [r_empathy, r_distress] {
        if !(-1.0..=1.0).contains(&value) {
            return Err(MetricError::OutOfRange { value });
        }
    }
    Ok((r_empathy + r_distress) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_id: String,
    pub n_examples: usize,
    pub pearson_empathy: f64,
    pub pearson_distress: f64,
    pub averaged_pearson: f64,
}

pub fn evaluate(
    pred_emp: &[f64],
    pred_dis: &[f64],
    gold_emp: &[f64],
    gold_dis: &[f64],
) -> Result<EvalReport, MetricError> {
    evaluate_run("", pred_emp, pred_dis, gold_emp, gold_dis)
}

pub fn evaluate_run(
    run_id: &str,
    pred_emp: &[f64],
    pred_dis: &[f64],
    gold_emp: &[f64],
    gold_dis: &[f64],
) -> Result<EvalReport, MetricError> {
    let n = gold_emp.len();
    for len in [pred_emp.len(), pred_dis.len(), gold_dis.len()] {
        if len != n {
            return Err(MetricError::LengthMismatch { left: n, right: len });
        }
    }
    let pearson_empathy = pearson(pred_emp, gold_emp)?;
    let pearson_distress = pearson(pred_dis, gold_dis)?;
    Ok(EvalReport {
        run_id: run_id.to_string(),
        n_examples: n,
        pearson_empathy,
        pearson_distress,
        averaged_pearson: averaged_pearson(pearson_empathy, pearson_distress)?,
    })
}

impl EvalReport {
    /// Machine-readable block with full precision, terminated by a blank line.
    pub fn to_kv_block(&self) -> String {
        format!(
            "run_id={}\nn={}\nr_emp={}\nr_dis={}\navg={}\n\n",
            self.run_id,
            self.n_examples,
            self.pearson_empathy,
            self.pearson_distress,
            self.averaged_pearson
        )
    }

    /// Parses every block of a results log.
    pub fn parse_log(text: &str) -> Vec<EvalReport> {
        text.split("\n\n")
            .filter_map(|block| {
                let mut report = EvalReport {
                    run_id: String::new(),
                    n_examples: 0,
                    pearson_empathy: f64::NAN,
                    pearson_distress: f64::NAN,
                    averaged_pearson: f64::NAN,
                };
                let mut seen = 0;
                for line in block.lines() {
                    let (k, v) = line.split_once('=')?;
                    match k {
                        "run_id" => report.run_id = v.to_string(),
                        "n" => report.n_examples = v.parse().ok()?,
                        "r_emp" => report.pearson_empathy = v.parse().ok()?,
                        "r_dis" => report.pearson_distress = v.parse().ok()?,
                        "avg" => report.averaged_pearson = v.parse().ok()?,
                        _ => continue,
                    }
                    seen += 1;
                }
                (seen == 5).then_some(report)
            })
            .collect()
    }

    /// Appends to the results log under an exclusive file lock.
    pub fn append_to_log(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        file.lock()?;
        let res = file.write_all(self.to_kv_block().as_bytes()).and_then(|_| file.flush());
        file.unlock()?;
        res
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<32} n={:<5} empathy r={:.4}  distress r={:.4}  averaged={:.4}",
            self.run_id,
            self.n_examples,
            self.pearson_empathy,
            self.pearson_distress,
            self.averaged_pearson
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverse_correlation() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn hand_computed_value() {
        // x̄ = 2.5, ȳ = 2.75; Sxy = 6.5, Sxx = 5, Syy = 8.75
        let expected = 6.5 / (5.0f64 * 8.75).sqrt();
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]).unwrap();
        assert!((r - expected).abs() < 1e-15);
        assert!((r - 0.9827).abs() < 1e-4);
    }

    #[test]
    fn error_cases() {
        assert_eq!(pearson(&[1.0], &[1.0]), Err(MetricError::TooFew { n: 1 }));
        assert_eq!(
            pearson(&[1.0, 2.0], &[1.0]),
            Err(MetricError::LengthMismatch { left: 2, right: 1 })
        );
        assert_eq!(pearson(&[2.0, 2.0], &[1.0, 3.0]), Err(MetricError::ZeroVariance { which: "x" }));
        assert_eq!(pearson(&[1.0, 3.0], &[5.0, 5.0]), Err(MetricError::ZeroVariance { which: "y" }));
        assert!(matches!(pearson(&[1.0, f64::NAN], &[1.0, 2.0]), Err(MetricError::NonFinite { .. })));
    }

    #[test]
    fn average_of_simcse_row() {
        assert_eq!(averaged_pearson(0.3311, 0.3746).unwrap(), 0.35285);
        assert_eq!(averaged_pearson(0.42, 0.42).unwrap(), 0.42);
        assert!(averaged_pearson(1.2, 0.0).is_err());
    }

    #[test]
    fn perfect_predictions_evaluate_to_one() {
        let g1 = [1.0, 2.0, 5.0];
        let g2 = [3.0, 1.0, 2.0];
        let r = evaluate(&g1, &g2, &g1, &g2).unwrap();
        assert_eq!((r.pearson_empathy, r.pearson_distress, r.averaged_pearson), (1.0, 1.0, 1.0));
        assert_eq!(r.n_examples, 3);
    }

    #[test]
    fn log_blocks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("results.log");
        let a = evaluate_run("a", &[1.0, 2.0, 4.0], &[1.0, 3.0, 2.0], &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])
            .unwrap();
        let mut b = a.clone();
        b.run_id = "b".into();
        a.append_to_log(&log).unwrap();
        b.append_to_log(&log).unwrap();
        let parsed = EvalReport::parse_log(&std::fs::read_to_string(&log).unwrap());
        assert_eq!(parsed, vec![a, b]);
    }
}
