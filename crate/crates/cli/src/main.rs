//! `affect` — train, predict, ensemble, score and submit from one run config.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 missing or
//! stale artifact, 5 metric error (e.g. constant predictions), 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affect_core::dataset::{SchemaConfig, Split};
use affect_core::metrics::EvalReport;
use affect_core::pipeline::{
    load_config, run_ensemble, run_predict, run_score, run_submit, run_train, score_submission,
    PipelineError, RunConfig, RunLayout, SubmissionFormat,
};
use affect_core::synthetic::{generate, SyntheticSpec};
use affect_core::ScoreRange;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "affect", version, about = "Essay-level empathy and distress prediction")]
struct Cli {
    /// More log output (repeat for debug); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured run directory.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let mut config = load_config(&self.config)?;
        if let Some(seed) = self.seed {
            config = config.with_seed(seed);
        }
        if let Some(dir) = &self.run_dir {
            config = config.with_run_dir(dir.clone());
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one regressor per encoder and target (cached by fingerprint).
    Train(RunArgs),
    /// Write prediction caches for a split.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Fit every combiner on dev predictions and apply it to dev and test.
    Ensemble(RunArgs),
    /// Score prediction files against gold labels.
    Score(ScoreArgs),
    /// Write the submission file from a combiner's test predictions.
    Submit {
        #[command(flatten)]
        run: RunArgs,
        /// Combiner to submit (default: the configured one).
        #[arg(long)]
        combiner: Option<String>,
    },
    /// train → predict dev/test → ensemble → submit.
    Run(RunArgs),
    /// Write a synthetic corpus whose labels follow from token counts.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        dev: usize,
        #[arg(long, default_value_t = 50)]
        test: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct ScoreArgs {
    /// Supplies the gold path (test split), schema, score range and results log.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Gold table; defaults to the config's test file.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Empathy predictions (`value` or `record_id<TAB>value` rows).
    #[arg(long, requires = "pred_dis", conflicts_with = "submission")]
    pred_emp: Option<PathBuf>,
    #[arg(long, requires = "pred_emp")]
    pred_dis: Option<PathBuf>,
    /// A two-column submission file instead of per-target files.
    #[arg(long, required_unless_present = "pred_emp")]
    submission: Option<PathBuf>,
    /// Label for the results log.
    #[arg(long, default_value = "score")]
    run_id: String,
    /// Append the report here (default: the run's results.log when a config is given).
    #[arg(long)]
    log: Option<PathBuf>,
}

fn print_report(r: &EvalReport) {
    println!("{r}");
}

fn score(args: &ScoreArgs) -> Result<(), PipelineError> {
    let config = args.config.as_deref().map(load_config).transpose()?;
    let gold = match (&args.gold, &config) {
        (Some(g), _) => g.clone(),
        (None, Some(c)) => c.data_paths.test.clone(),
        (None, None) => return Err(PipelineError::ConfigInvalid("--gold or --config is required".into())),
    };
    let (schema, range, format) = match &config {
        Some(c) => (c.schema.clone(), c.score_range, c.submission_format),
        None => (SchemaConfig::default(), ScoreRange::default(), SubmissionFormat::default()),
    };
    let log = args.log.clone().or_else(|| config.as_ref().map(|c| RunLayout::new(&c.run_dir).results_log()));
    let report = match (&args.pred_emp, &args.pred_dis, &args.submission) {
        (Some(e), Some(d), _) => run_score(e, d, &gold, &schema, range, &args.run_id, log.as_deref())?,
        (_, _, Some(s)) => score_submission(s, &format, &gold, &schema, range, &args.run_id, log.as_deref())?,
        _ => return Err(PipelineError::ConfigInvalid("give --pred-emp/--pred-dis or --submission".into())),
    };
    print_report(&report);
    Ok(())
}

fn train(config: &RunConfig) -> Result<(), PipelineError> {
    let registry = affect_backbones::registry();
    for t in run_train(config, &registry)? {
        let r = t.best_dev_pearson.map(|r| format!("{r:.4}")).unwrap_or_else(|| "NA".into());
        let state = if t.cached { "cached" } else { "trained" };
        println!("{state:<8} {} [{}] dev r={r}  {}", t.encoder, t.target, t.dir.display());
    }
    Ok(())
}

fn predict(config: &RunConfig, split: Split) -> Result<(), PipelineError> {
    for p in run_predict(config, split, &affect_backbones::registry())? {
        println!("{}", p.display());
    }
    Ok(())
}

fn ensemble(config: &RunConfig) -> Result<(), PipelineError> {
    for o in run_ensemble(config)? {
        let label = if o.is_combiner { "combiner" } else { "model" };
        for (split, rep) in [("dev", &o.dev_report), ("test", &o.test_report)] {
            match rep {
                Some(r) => println!("{label:<8} {}", r),
                None => println!("{label:<8} {}/{split}: no gold labels", o.name),
            }
        }
    }
    Ok(())
}

fn submit(config: &RunConfig, combiner: Option<&str>) -> Result<(), PipelineError> {
    let path = run_submit(config, combiner)?;
    println!("{}", path.display());
    Ok(())
}

fn synth(out: &Path, spec: SyntheticSpec) -> Result<(), PipelineError> {
    generate(&spec).write_to(out).map_err(|e| PipelineError::Io { path: out.to_path_buf(), message: e.to_string() })?;
    println!("{}", out.display());
    Ok(())
}

fn dispatch(cmd: &Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Train(a) => train(&a.load()?),
        Command::Predict { run, split } => predict(&run.load()?, *split),
        Command::Ensemble(a) => ensemble(&a.load()?),
        Command::Score(a) => score(a),
        Command::Submit { run, combiner } => submit(&run.load()?, combiner.as_deref()),
        Command::Run(a) => {
            let config = a.load()?;
            train(&config)?;
            predict(&config, Split::Dev)?;
            predict(&config, Split::Test)?;
            ensemble(&config)?;
            submit(&config, None)
        }
        Command::Synth { out, train, dev, test, seed } => synth(
            out,
            SyntheticSpec { n_train: *train, n_dev: *dev, n_test: *test, seed: *seed, ..Default::default() },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
