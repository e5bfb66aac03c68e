use std::path::{Path, PathBuf};

use log::{info, warn};

use super::{io_err, PipelineError, RunConfig, RunLayout};
use crate::dataset::{to_examples_with, Dataset, Split};
use crate::encoders::train_fingerprint;
use crate::encoders::{
    load_model, save_model, stored_fingerprint, EncoderRegistry, PredictionVector, Predictor,
    MODEL_META,
};
use crate::ensemble::{
    assemble_matrix, combine, fit_combiner, meta_path, read_prediction_cache, write_prediction_cache,
    PredictionMatrix,
};
use crate::fingerprint::Fingerprint;
use crate::metrics::{evaluate_run, EvalReport};
use crate::Target;

pub(crate) fn load_split(config: &RunConfig, split: Split) -> Result<Dataset, PipelineError> {
    Ok(Dataset::load(config.data_paths.get(split), split, &config.schema, config.score_range)?)
}

/// One trained (encoder, target) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub encoder: String,
    pub target: Target,
    pub dir: PathBuf,
    /// True when an up-to-date artifact was found and training was skipped.
    pub cached: bool,
    pub best_dev_pearson: Option<f64>,
}

fn expected_fingerprint(
    config: &RunConfig,
    train: &Dataset,
    dev: &Dataset,
    encoder: usize,
    target: Target,
) -> Result<(Fingerprint, Vec<crate::dataset::Example>, Vec<crate::dataset::Example>), PipelineError> {
    let tr = to_examples_with(train, target, config.use_demographics)?;
    let dv = to_examples_with(dev, target, config.use_demographics)?;
    let fp = train_fingerprint(&tr, &dv, &config.encoders[encoder], &config.train, target, config.score_range);
    Ok((fp, tr, dv))
}

/// Fine-tunes every (encoder, target) pair on train, selecting checkpoints on dev.
/// Pairs whose stored fingerprint matches the current inputs are skipped.
pub fn run_train(config: &RunConfig, registry: &EncoderRegistry) -> Result<Vec<TrainOutcome>, PipelineError> {
    config.check_encoders(registry)?;
    let layout = RunLayout::new(&config.run_dir);
    let train = load_split(config, Split::Train)?;
    let dev = load_split(config, Split::Dev)?;
    let mut out = Vec::new();
    for (i, spec) in config.encoders.iter().enumerate() {
        for target in Target::ALL {
            let dir = layout.model_dir(&spec.name, target);
            let (fp, tr, dv) = expected_fingerprint(config, &train, &dev, i, target)?;
            if stored_fingerprint(&dir).as_ref() == Some(&fp) {
                let artifact = load_model(&dir)?;
                info!("cache hit: {} {target} ({})", spec.name, fp.short());
                out.push(TrainOutcome {
                    encoder: spec.name.clone(),
                    target,
                    dir,
                    cached: true,
                    best_dev_pearson: artifact.report.best_dev_pearson,
                });
                continue;
            }
            info!("training {} for {target} on {} examples", spec.name, tr.len());
            let (model, report) = crate::encoders::train_regressor(
                &tr,
                &dv,
                spec,
                &config.train,
                target,
                config.score_range,
                registry,
            )?;
            // a partially written artifact must not look complete
            let _ = std::fs::remove_file(dir.join(MODEL_META));
            save_model(&dir, &model, &report)?;
            info!(
                "{} {target}: best epoch {} dev r={}",
                spec.name,
                report.best_epoch,
                report.best_dev_pearson.map(|r| format!("{r:.4}")).unwrap_or_else(|| "NA".into())
            );
            out.push(TrainOutcome {
                encoder: spec.name.clone(),
                target,
                dir,
                cached: false,
                best_dev_pearson: report.best_dev_pearson,
            });
        }
    }
    Ok(out)
}

fn require_model(config: &RunConfig, dir: &Path, expected: &Fingerprint) -> Result<(), PipelineError> {
    match stored_fingerprint(dir) {
        None => Err(PipelineError::MissingArtifact {
            path: dir.to_path_buf(),
            hint: "run `train` first".into(),
        }),
        Some(fp) if &fp != expected => Err(PipelineError::StaleArtifact {
            path: dir.to_path_buf(),
            reason: format!(
                "trained with different inputs ({} != {}); rerun `train` (run dir {})",
                fp.short(),
                expected.short(),
                config.run_dir.display()
            ),
        }),
        Some(_) => Ok(()),
    }
}

/// Predicts `split` with every trained model, writing one cache file per
/// (encoder, target).
pub fn run_predict(
    config: &RunConfig,
    split: Split,
    registry: &EncoderRegistry,
) -> Result<Vec<PathBuf>, PipelineError> {
    config.check_encoders(registry)?;
    let layout = RunLayout::new(&config.run_dir);
    let train = load_split(config, Split::Train)?;
    let dev = load_split(config, Split::Dev)?;
    let data = load_split(config, split)?;
    let mut out = Vec::new();
    for (i, spec) in config.encoders.iter().enumerate() {
        for target in Target::ALL {
            let dir = layout.model_dir(&spec.name, target);
            let (fp, _, _) = expected_fingerprint(config, &train, &dev, i, target)?;
            require_model(config, &dir, &fp)?;
            let artifact = load_model(&dir)?;
            let predictor = Predictor::new(artifact.model, registry)?;
            let pred = predictor.predict_dataset(&data, config.use_demographics)?;
            let path = layout.prediction_file(split, &spec.name, target);
            write_prediction_cache(&path, &pred, Some(&fp))?;
            info!("wrote {} ({} rows)", path.display(), pred.len());
            out.push(path);
        }
    }
    Ok(out)
}

/// Dev/test scores of one base model or combiner.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutcome {
    pub name: String,
    /// False for a single encoder's own predictions.
    pub is_combiner: bool,
    pub dev_report: Option<EvalReport>,
    /// `None` when the test split carries no gold scores.
    pub test_report: Option<EvalReport>,
}

fn load_cached(
    path: &Path,
    data: &Dataset,
    producer: Option<&Path>,
) -> Result<PredictionVector, PipelineError> {
    if !path.exists() || !meta_path(path).exists() {
        return Err(PipelineError::MissingArtifact {
            path: path.to_path_buf(),
            hint: format!("run `predict --split {}` first", data.split),
        });
    }
    let (pred, meta) = read_prediction_cache(path)?;
    if pred.dataset_fingerprint != data.content_fingerprint() {
        return Err(PipelineError::StaleArtifact {
            path: path.to_path_buf(),
            reason: format!("computed on a different {} split", data.split),
        });
    }
    if let Some(model_dir) = producer {
        if meta.producer_fingerprint != stored_fingerprint(model_dir) {
            return Err(PipelineError::StaleArtifact {
                path: path.to_path_buf(),
                reason: format!("the model in {} has been retrained", model_dir.display()),
            });
        }
    }
    Ok(pred)
}

fn score_pair(
    run_id: String,
    emp: &[f64],
    dis: &[f64],
    data: &Dataset,
    log: &Path,
) -> Result<Option<EvalReport>, PipelineError> {
    if !(data.has_labels(Target::Empathy) && data.has_labels(Target::Distress)) {
        return Ok(None);
    }
    let gold_emp = data.gold(Target::Empathy)?;
    let gold_dis = data.gold(Target::Distress)?;
    match evaluate_run(&run_id, emp, dis, &gold_emp, &gold_dis) {
        Ok(report) => {
            report.append_to_log(log).map_err(|e| io_err(log, e))?;
            Ok(Some(report))
        }
        Err(e) => {
            warn!("{run_id}: not scored: {e}");
            Ok(None)
        }
    }
}

/// Fits every configured combiner on dev predictions, applies it to dev and test,
/// and logs dev (and, when gold exists, test) scores for base models and combiners.
pub fn run_ensemble(config: &RunConfig) -> Result<Vec<EnsembleOutcome>, PipelineError> {
    let layout = RunLayout::new(&config.run_dir);
    let log = layout.results_log();
    let dev = load_split(config, Split::Dev)?;
    let test = load_split(config, Split::Test)?;

    // [target] -> (dev matrix, test matrix)
    let mut matrices: Vec<(PredictionMatrix, PredictionMatrix)> = Vec::new();
    for target in Target::ALL {
        let mut per_split = Vec::new();
        for (split, data) in [(Split::Dev, &dev), (Split::Test, &test)] {
            let preds = config
                .encoders
                .iter()
                .map(|spec| {
                    let path = layout.prediction_file(split, &spec.name, target);
                    load_cached(&path, data, Some(&layout.model_dir(&spec.name, target)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            per_split.push(assemble_matrix(&preds)?);
        }
        let test_m = per_split.pop().expect("two splits");
        let dev_m = per_split.pop().expect("two splits");
        matrices.push((dev_m, test_m));
    }
    let [(dev_emp, test_emp), (dev_dis, test_dis)] =
        <[_; 2]>::try_from(matrices).expect("two targets");

    let mut outcomes = Vec::new();
    for (j, spec) in config.encoders.iter().enumerate() {
        let col = |m: &PredictionMatrix| m.values.column(j).to_vec();
        let dev_report =
            score_pair(format!("model:{}/dev", spec.name), &col(&dev_emp), &col(&dev_dis), &dev, &log)?;
        let test_report =
            score_pair(format!("model:{}/test", spec.name), &col(&test_emp), &col(&test_dis), &test, &log)?;
        outcomes.push(EnsembleOutcome { name: spec.name.clone(), is_combiner: false, dev_report, test_report });
    }

    for combiner in &config.combiners {
        let mut dev_out = Vec::new();
        let mut test_out = Vec::new();
        for (target, dev_m, test_m) in
            [(Target::Empathy, &dev_emp, &test_emp), (Target::Distress, &dev_dis, &test_dis)]
        {
            let gold = dev.gold(target)?;
            let fitted = fit_combiner(&combiner.kind, dev_m, &gold, config.seed, config.score_range)?;
            let path = layout.combiner_file(&combiner.name, target);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            std::fs::write(&path, fitted.to_json()).map_err(|e| io_err(&path, e))?;
            std::fs::write(meta_path(&path), fitted.meta_sidecar()).map_err(|e| io_err(&path, e))?;

            for (split, m, sink) in [(Split::Dev, dev_m, &mut dev_out), (Split::Test, test_m, &mut test_out)] {
                let pred = combine(&fitted, m)?;
                let p = layout.ensemble_prediction_file(&combiner.name, split, target);
                write_prediction_cache(&p, &pred, Some(&fitted.fit_fingerprint))?;
                sink.push(pred.values);
            }
        }
        let dev_report = score_pair(format!("{}/dev", combiner.name), &dev_out[0], &dev_out[1], &dev, &log)?;
        let test_report =
            score_pair(format!("{}/test", combiner.name), &test_out[0], &test_out[1], &test, &log)?;
        outcomes.push(EnsembleOutcome { name: combiner.name.clone(), is_combiner: true, dev_report, test_report });
    }
    Ok(outcomes)
}

/// Reads the test predictions of a fitted combiner, checking they match the
/// configured test split.
pub(crate) fn load_ensemble_test(
    config: &RunConfig,
    combiner: &str,
) -> Result<(PredictionVector, PredictionVector), PipelineError> {
    let layout = RunLayout::new(&config.run_dir);
    let test = load_split(config, Split::Test)?;
    let read = |target| -> Result<PredictionVector, PipelineError> {
        let p = layout.ensemble_prediction_file(combiner, Split::Test, target);
        if !p.exists() {
            return Err(PipelineError::MissingArtifact { path: p, hint: "run `ensemble` first".into() });
        }
        load_cached(&p, &test, None)
    };
    Ok((read(Target::Empathy)?, read(Target::Distress)?))
}
