//! Tab-separated essay tables: parsing, validation, serialization and
//! (text, label) extraction.
//!
//! Files carry a header row. Three roles are mapped through [`SchemaConfig`]: the
//! record id, the essay text and the two optional gold-label columns. Every other
//! column is kept verbatim as a demographic attribute.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{Fingerprint, Hasher};
use crate::{ScoreRange, Target};

/// Essays outside this character band are logged but still accepted.
pub const TYPICAL_ESSAY_CHARS: (usize, usize) = (300, 800);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("table is empty: no header row")]
    NoHeader,
    #[error("column `{column}` not found in header")]
    MissingColumn { column: String },
    #[error("duplicate column `{column}` in header")]
    DuplicateColumn { column: String },
    #[error("row {row} (line {line}): expected {expected} fields, found {found}")]
    MalformedRow { row: usize, line: u64, expected: usize, found: usize },
    #[error("row {row}: {column} value `{value}` is not a number")]
    NonNumericLabel { row: usize, column: String, value: String },
    #[error("row {row}: {column} value {value} outside score range [{lo}, {hi}]")]
    LabelOutOfRange { row: usize, column: String, value: f64, lo: f64, hi: f64 },
    #[error("row {row}: duplicate record id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: empty record id")]
    EmptyId { row: usize },
    #[error("row {row}: essay is empty")]
    EmptyEssay { row: usize },
    #[error("record {index} (`{record_id}`) has no gold {target} score")]
    MissingLabel { index: usize, record_id: String, target: Target },
    #[error("table is not valid tab-separated text: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, dev or test)")),
        }
    }
}

/// Maps column roles onto header names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemaConfig {
    pub id: String,
    pub essay: String,
    pub empathy: String,
    pub distress: String,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            id: "essay_id".into(),
            essay: "essay".into(),
            empathy: "empathy".into(),
            distress: "distress".into(),
        }
    }
}

impl SchemaConfig {
    pub fn label_column(&self, target: Target) -> &str {
        match target {
            Target::Empathy => &self.empathy,
            Target::Distress => &self.distress,
        }
    }
}

/// A demographic cell. Cells that parse as finite numbers are stored as numbers,
/// everything else (including empty cells) as text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Number(f64),
    Text(String),
}

impl AttrValue {
    fn parse(cell: &str) -> Self {
        match cell.trim().parse::<f64>() {
            Ok(v) if v.is_finite() && !cell.trim().is_empty() => AttrValue::Number(v),
            _ => AttrValue::Text(cell.to_string()),
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Number(v) => write!(f, "{v}"),
            AttrValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssayRecord {
    pub record_id: String,
    pub essay: String,
    pub demographics: BTreeMap<String, AttrValue>,
    pub gold_empathy: Option<f64>,
    pub gold_distress: Option<f64>,
}

impl EssayRecord {
    pub fn gold(&self, target: Target) -> Option<f64> {
        match target {
            Target::Empathy => self.gold_empathy,
            Target::Distress => self.gold_distress,
        }
    }

    /// Essay text, optionally followed by a rendering of the demographic attributes.
    pub fn model_input(&self, use_demographics: bool) -> String {
        if !use_demographics || self.demographics.is_empty() {
            return self.essay.clone();
        }
        let attrs = self
            .demographics
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("; ");
        format!("{}\n\n{attrs}", self.essay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Id,
    Essay,
    Label(Target),
    Attr,
}

/// One parsed split. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub records: Vec<EssayRecord>,
    /// Header column names in file order.
    pub columns: Vec<String>,
    schema: SchemaConfig,
}

/// (model input text, gold score)
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub text: String,
    pub label: f64,
}

impl Dataset {
    pub fn empty(split: Split, schema: SchemaConfig) -> Self {
        let columns = vec![schema.id.clone(), schema.essay.clone()];
        Self { split, records: Vec::new(), columns, schema }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn schema(&self) -> &SchemaConfig {
        &self.schema
    }

    pub fn load(
        path: &Path,
        split: Split,
        schema: &SchemaConfig,
        range: ScoreRange,
    ) -> Result<Self, DatasetError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        parse_essay_table(&raw, split, schema, range)
    }

    pub fn record_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.record_id.clone()).collect()
    }

    /// True when the split is non-empty and every record carries the target's gold score.
    pub fn has_labels(&self, target: Target) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.gold(target).is_some())
    }

    pub fn gold(&self, target: Target) -> Result<Vec<f64>, DatasetError> {
        self.records
            .iter()
            .enumerate()
            .map(|(index, r)| {
                r.gold(target).ok_or_else(|| DatasetError::MissingLabel {
                    index,
                    record_id: r.record_id.clone(),
                    target,
                })
            })
            .collect()
    }

    pub fn texts(&self, use_demographics: bool) -> Vec<String> {
        self.records.iter().map(|r| r.model_input(use_demographics)).collect()
    }

    /// Hash of ids, essays and demographics. Gold labels are excluded so that
    /// stripping labels from a split leaves its fingerprint unchanged.
    pub fn content_fingerprint(&self) -> Fingerprint {
        let mut h = Hasher::new("dataset-content");
        h.u64(self.records.len() as u64);
        for r in &self.records {
            h.str(&r.record_id).str(&r.essay);
            h.u64(r.demographics.len() as u64);
            for (k, v) in &r.demographics {
                h.str(k).str(&v.to_string());
            }
        }
        h.finish()
    }

    /// Writes the table back out in the same column order.
    pub fn to_tsv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .quote_style(csv::QuoteStyle::Necessary)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let roles = assign_roles(&self.columns, &self.schema);
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.records {
            let row: Vec<String> = self
                .columns
                .iter()
                .zip(&roles)
                .map(|(col, role)| match role {
                    Role::Id => r.record_id.clone(),
                    Role::Essay => r.essay.clone(),
                    Role::Label(t) => r.gold(*t).map(|v| v.to_string()).unwrap_or_default(),
                    Role::Attr => r.demographics.get(col).map(|v| v.to_string()).unwrap_or_default(),
                })
                .collect();
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

fn assign_roles(columns: &[String], schema: &SchemaConfig) -> Vec<Role> {
    columns
        .iter()
        .map(|c| {
            if *c == schema.id {
                Role::Id
            } else if *c == schema.essay {
                Role::Essay
            } else if *c == schema.empathy {
                Role::Label(Target::Empathy)
            } else if *c == schema.distress {
                Role::Label(Target::Distress)
            } else {
                Role::Attr
            }
        })
        .collect()
}

/// Parses one split. Rows keep file order; label columns missing from the header
/// give records without gold scores; empty label cells likewise.
pub fn parse_essay_table(
    raw_text: &str,
    split: Split,
    schema: &SchemaConfig,
    range: ScoreRange,
) -> Result<Dataset, DatasetError> {
    let raw_text = raw_text.strip_prefix('\u{feff}').unwrap_or(raw_text);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .from_reader(raw_text.as_bytes());
    let mut rows = reader.records();

    let header = match rows.next() {
        Some(h) => h?,
        None => return Err(DatasetError::NoHeader),
    };
    let columns: Vec<String> = header.iter().map(|c| c.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for c in &columns {
        if !seen.insert(c.as_str()) {
            return Err(DatasetError::DuplicateColumn { column: c.clone() });
        }
    }
    for required in [&schema.id, &schema.essay] {
        if !columns.contains(required) {
            return Err(DatasetError::MissingColumn { column: required.clone() });
        }
    }
    let roles = assign_roles(&columns, schema);

    let mut records = Vec::new();
    let mut ids = HashSet::new();
    let mut atypical = 0usize;
    for (row, fields) in rows.enumerate() {
        let fields = fields?;
        let line = fields.position().map(|p| p.line()).unwrap_or(0);
        // A trailing blank line parses as a single empty field.
        if fields.len() == 1 && fields[0].trim().is_empty() {
            continue;
        }
        if fields.len() != columns.len() {
            return Err(DatasetError::MalformedRow {
                row,
                line,
                expected: columns.len(),
                found: fields.len(),
            });
        }
        let mut record = EssayRecord {
            record_id: String::new(),
            essay: String::new(),
            demographics: BTreeMap::new(),
            gold_empathy: None,
            gold_distress: None,
        };
        for ((col, role), cell) in columns.iter().zip(&roles).zip(fields.iter()) {
            match role {
                Role::Id => record.record_id = cell.trim().to_string(),
                Role::Essay => record.essay = cell.to_string(),
                Role::Label(target) => {
                    let value = parse_label(cell, row, col, range)?;
                    match target {
                        Target::Empathy => record.gold_empathy = value,
                        Target::Distress => record.gold_distress = value,
                    }
                }
                Role::Attr => {
                    record.demographics.insert(col.clone(), AttrValue::parse(cell));
                }
            }
        }
        if record.record_id.is_empty() {
            return Err(DatasetError::EmptyId { row });
        }
        if record.essay.trim().is_empty() {
            return Err(DatasetError::EmptyEssay { row });
        }
        if !ids.insert(record.record_id.clone()) {
            return Err(DatasetError::DuplicateId { row, id: record.record_id });
        }
        let chars = record.essay.chars().count();
        if chars < TYPICAL_ESSAY_CHARS.0 || chars > TYPICAL_ESSAY_CHARS.1 {
            atypical += 1;
        }
        records.push(record);
    }
    if atypical > 0 {
        log::info!(
            "{split}: {atypical} of {} essays fall outside {}-{} characters",
            records.len(),
            TYPICAL_ESSAY_CHARS.0,
            TYPICAL_ESSAY_CHARS.1
        );
    }
    Ok(Dataset { split, records, columns, schema: schema.clone() })
}

fn parse_label(
    cell: &str,
    row: usize,
    column: &str,
    range: ScoreRange,
) -> Result<Option<f64>, DatasetError> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let value: f64 = cell.parse().map_err(|_| DatasetError::NonNumericLabel {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })?;
    if !value.is_finite() {
        return Err(DatasetError::NonNumericLabel {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        });
    }
    if !range.contains(value) {
        return Err(DatasetError::LabelOutOfRange {
            row,
            column: column.to_string(),
            value,
            lo: range.lo,
            hi: range.hi,
        });
    }
    Ok(Some(value))
}

/// Record counts and label availability across the three splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub label_availability: LabelAvailability,
}

/// Per split: true when every record carries both gold scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAvailability {
    pub train: bool,
    pub dev: bool,
    pub test: bool,
}

pub fn split_summary(train: &Dataset, dev: &Dataset, test: &Dataset) -> SplitStats {
    let labeled = |d: &Dataset| Target::ALL.iter().all(|t| d.has_labels(*t));
    SplitStats {
        n_train: train.len(),
        n_dev: dev.len(),
        n_test: test.len(),
        label_availability: LabelAvailability {
            train: labeled(train),
            dev: labeled(dev),
            test: labeled(test),
        },
    }
}

/// One (essay, gold) pair per record, in record order.
pub fn to_examples(dataset: &Dataset, target: Target) -> Result<Vec<Example>, DatasetError> {
    to_examples_with(dataset, target, false)
}

/// As [`to_examples`], appending demographic attributes to the text when asked.
pub fn to_examples_with(
    dataset: &Dataset,
    target: Target,
    use_demographics: bool,
) -> Result<Vec<Example>, DatasetError> {
    let labels = dataset.gold(target)?;
    Ok(dataset
        .records
        .iter()
        .zip(labels)
        .map(|(r, label)| Example { text: r.model_input(use_demographics), label })
        .collect())
}
