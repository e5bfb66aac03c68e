use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{PipelineError, SubmissionFormat};
use crate::dataset::{SchemaConfig, Split};
use crate::encoders::{EncoderRegistry, EncoderSpec, Loss, TrainConfig};
use crate::ensemble::CombinerKind;
use crate::{ScoreRange, Target};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

impl DataPaths {
    pub fn get(&self, split: Split) -> &Path {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// A named combiner as listed in the config. Names are the kind name, suffixed
/// with `_2`, `_3`, ... when a kind repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedCombiner {
    pub name: String,
    pub kind: CombinerKind,
}

/// Fully validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_paths: DataPaths,
    pub schema: SchemaConfig,
    pub encoders: Vec<EncoderSpec>,
    pub train: TrainConfig,
    pub combiners: Vec<NamedCombiner>,
    pub score_range: ScoreRange,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub use_demographics: bool,
    pub submission_combiner: String,
    pub submission_path: PathBuf,
    pub submission_format: SubmissionFormat,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    train: PathBuf,
    dev: PathBuf,
    test: PathBuf,
}

/// `[train]` without a seed: the top-level seed feeds every stochastic component.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    loss: Option<Loss>,
    weight_decay: Option<f64>,
    grad_clip: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSubmission {
    combiner: Option<String>,
    path: Option<PathBuf>,
    columns: Option<[Target; 2]>,
    header: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    run_dir: Option<PathBuf>,
    use_demographics: Option<bool>,
    score_range: Option<[f64; 2]>,
    data: RawData,
    #[serde(default)]
    schema: SchemaConfig,
    train: Option<RawTrain>,
    encoders: Vec<EncoderSpec>,
    combiners: Option<Vec<toml::Table>>,
    submission: Option<RawSubmission>,
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::ConfigInvalid(msg.into())
}

fn parse_combiner(i: usize, table: &toml::Table) -> Result<CombinerKind, PipelineError> {
    let kind = table
        .get("kind")
        .and_then(|v| v.as_str())
        .ok_or_else(|| invalid(format!("combiners[{i}]: missing string field `kind`")))?;
    let mut hyper = BTreeMap::new();
    for (k, v) in table.iter().filter(|(k, _)| *k != "kind") {
        let num = v
            .as_float()
            .or_else(|| v.as_integer().map(|n| n as f64))
            .ok_or_else(|| invalid(format!("combiners[{i}].{k}: expected a number")))?;
        hyper.insert(k.clone(), num);
    }
    CombinerKind::from_hyper(kind, &hyper).map_err(|e| invalid(format!("combiners[{i}]: {e}")))
}

fn name_combiners(kinds: Vec<CombinerKind>) -> Vec<NamedCombiner> {
    let mut seen: BTreeMap<&'static str, usize> = BTreeMap::new();
    kinds
        .into_iter()
        .map(|kind| {
            let n = seen.entry(kind.name()).or_insert(0);
            *n += 1;
            let name = if *n == 1 { kind.name().to_string() } else { format!("{}_{}", kind.name(), n) };
            NamedCombiner { name, kind }
        })
        .collect()
}

impl RunConfig {
    /// Parses TOML text. Relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };

        let seed = raw.seed.unwrap_or(DEFAULT_SEED);
        let score_range = match raw.score_range {
            Some([lo, hi]) => ScoreRange::new(lo, hi).map_err(|e| invalid(format!("score_range: {e}")))?,
            None => ScoreRange::default(),
        };
        let mut train = TrainConfig { seed, ..TrainConfig::default() };
        if let Some(t) = raw.train {
            train.learning_rate = t.learning_rate.unwrap_or(train.learning_rate);
            train.epochs = t.epochs.unwrap_or(train.epochs);
            train.batch_size = t.batch_size.unwrap_or(train.batch_size);
            train.loss = t.loss.unwrap_or(train.loss);
            train.weight_decay = t.weight_decay.unwrap_or(train.weight_decay);
            train.grad_clip = t.grad_clip.or(train.grad_clip);
        }
        train.validate().map_err(|e| invalid(format!("train: {e}")))?;

        if raw.encoders.is_empty() {
            return Err(invalid("encoders: at least one encoder is required"));
        }
        let mut names = HashSet::new();
        for (i, e) in raw.encoders.iter().enumerate() {
            e.validate().map_err(|err| invalid(format!("encoders[{i}]: {err}")))?;
            if !names.insert(e.name.as_str()) {
                return Err(invalid(format!("encoders[{i}]: duplicate encoder `{}`", e.name)));
            }
        }

        let mut kinds = match raw.combiners {
            Some(tables) => tables
                .iter()
                .enumerate()
                .map(|(i, t)| parse_combiner(i, t))
                .collect::<Result<Vec<_>, _>>()?,
            None => CombinerKind::all_defaults(),
        };
        if !kinds.iter().any(|k| matches!(k, CombinerKind::Mean)) {
            kinds.insert(0, CombinerKind::Mean);
        }
        let combiners = name_combiners(kinds);

        let run_dir = resolve(raw.run_dir.unwrap_or_else(|| PathBuf::from("run")));
        let sub = raw.submission.unwrap_or_default();
        let submission_combiner = sub.combiner.unwrap_or_else(|| "mean".to_string());
        if !combiners.iter().any(|c| c.name == submission_combiner) {
            return Err(invalid(format!(
                "submission.combiner: `{submission_combiner}` is not among the configured combiners"
            )));
        }
        let submission_path =
            sub.path.map(resolve).unwrap_or_else(|| run_dir.join("submission.tsv"));
        let mut submission_format = SubmissionFormat::default();
        if let Some(columns) = sub.columns {
            if columns[0] == columns[1] {
                return Err(invalid("submission.columns: must name empathy and distress once each"));
            }
            submission_format.columns = columns;
        }
        submission_format.header = sub.header.unwrap_or(false);

        Ok(RunConfig {
            data_paths: DataPaths {
                train: resolve(raw.data.train),
                dev: resolve(raw.data.dev),
                test: resolve(raw.data.test),
            },
            schema: raw.schema,
            encoders: raw.encoders,
            train,
            combiners,
            score_range,
            seed,
            run_dir,
            use_demographics: raw.use_demographics.unwrap_or(false),
            submission_combiner,
            submission_path,
            submission_format,
        })
    }

    /// Checks every encoder name against the registry.
    pub fn check_encoders(&self, registry: &EncoderRegistry) -> Result<(), PipelineError> {
        for (i, e) in self.encoders.iter().enumerate() {
            registry.validate(e).map_err(|err| invalid(format!("encoders[{i}]: {err}")))?;
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn with_run_dir(mut self, run_dir: PathBuf) -> Self {
        if self.submission_path == self.run_dir.join("submission.tsv") {
            self.submission_path = run_dir.join("submission.tsv");
        }
        self.run_dir = run_dir;
        self
    }
}

/// Reads and validates a TOML run configuration.
pub fn load_config(path: &Path) -> Result<RunConfig, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    RunConfig::from_toml_str(&text, base)
        .map_err(|e| match e {
            PipelineError::ConfigInvalid(m) => invalid(format!("{}: {m}", path.display())),
            other => other,
        })
}
