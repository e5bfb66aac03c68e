use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use affect_backbones::scaffold::{tiny_config, write_random_checkpoint};
use affect_core::metrics::EvalReport;

fn affect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affect")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TOY: &str = r#"
seed = 42
run_dir = "run"

[data]
train = "data/train.tsv"
dev = "data/dev.tsv"
test = "data/test.tsv"

[train]
learning_rate = 0.05
epochs = 30

[[encoders]]
name = "toy"
pooling = "mean_tokens"
frozen = true

[[combiners]]
kind = "mean"

[[combiners]]
kind = "linear_regression"
"#;

/// A temp dir with the default synthetic corpus under `data/` and `config` written to `run.toml`.
fn workspace(config: &str) -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let out = affect(&["synth", "--out", p(&tmp.path().join("data"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    (tmp, cfg)
}

#[test]
fn run_then_retrain_uses_the_cache() {
    let (tmp, cfg) = workspace(TOY);
    let out = affect(&["run", "-c", p(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("trained  toy [empathy]"), "{text}");
    let submission = tmp.path().join("run/submission.tsv");
    assert_eq!(std::fs::read_to_string(&submission).unwrap().lines().count(), 50);

    let log = std::fs::read_to_string(tmp.path().join("run/results.log")).unwrap();
    let mean_dev = EvalReport::parse_log(&log).into_iter().find(|r| r.run_id == "mean/dev").unwrap();
    assert!(mean_dev.averaged_pearson > 0.9, "{mean_dev}");

    let again = affect(&["train", "-c", p(&cfg)]);
    assert_eq!(code(&again), 0);
    assert_eq!(stdout(&again).matches("cached").count(), 2, "{}", stdout(&again));

    let other = affect(&["submit", "-c", p(&cfg), "--combiner", "linear_regression"]);
    assert_eq!(code(&other), 0);
    assert_eq!(code(&affect(&["submit", "-c", p(&cfg), "--combiner", "svr"])), 2);
}

#[test]
fn score_accepts_submissions_and_per_target_files() {
    let (tmp, _) = workspace(TOY);
    let gold = tmp.path().join("data/dev.tsv");
    let rows: Vec<(f64, f64)> = std::fs::read_to_string(&gold)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    // a perfect submission, and per-target files with a monotone distortion
    let sub = tmp.path().join("sub.tsv");
    std::fs::write(&sub, rows.iter().map(|(e, d)| format!("{e}\t{d}\n")).collect::<String>()).unwrap();
    let (emp, dis) = (tmp.path().join("emp.txt"), tmp.path().join("dis.txt"));
    std::fs::write(&emp, rows.iter().map(|(e, _)| format!("{}\n", 2.0 * e + 1.0)).collect::<String>()).unwrap();
    std::fs::write(&dis, rows.iter().map(|(_, d)| format!("{}\n", -d)).collect::<String>()).unwrap();

    let log = tmp.path().join("scores.log");
    let out = affect(&["score", "--gold", p(&gold), "--submission", p(&sub), "--log", p(&log), "--run-id", "perfect"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = affect(&[
        "score", "--gold", p(&gold), "--pred-emp", p(&emp), "--pred-dis", p(&dis), "--log", p(&log), "--run-id", "mixed",
    ]);
    assert_eq!(code(&out), 0);

    let reports = EvalReport::parse_log(&std::fs::read_to_string(&log).unwrap());
    assert_eq!(reports.len(), 2);
    assert!((reports[0].averaged_pearson - 1.0).abs() < 1e-12);
    assert!((reports[1].pearson_empathy - 1.0).abs() < 1e-12);
    assert!((reports[1].pearson_distress + 1.0).abs() < 1e-12);
    assert!(reports[1].averaged_pearson.abs() < 1e-12);
}

#[test]
fn failures_map_to_exit_codes() {
    let (tmp, cfg) = workspace(TOY);
    let gold = tmp.path().join("data/dev.tsv");

    // 2: configuration and usage
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, format!("{TOY}\nunknown_key = 1\n")).unwrap();
    assert_eq!(code(&affect(&["train", "-c", p(&bad)])), 2);
    assert_eq!(code(&affect(&["train", "-c", p(&tmp.path().join("absent.toml"))])), 2);
    assert_eq!(code(&affect(&["frobnicate"])), 2);
    assert_eq!(code(&affect(&["score", "--gold", p(&gold)])), 2);

    // 3: data
    let short = tmp.path().join("short.tsv");
    std::fs::write(&short, "1\t1\n2\t2\n").unwrap();
    assert_eq!(code(&affect(&["score", "--gold", p(&gold), "--submission", p(&short)])), 3);

    // 4: artifacts that do not exist yet
    assert_eq!(code(&affect(&["predict", "-c", p(&cfg), "--split", "dev"])), 4);
    assert_eq!(code(&affect(&["submit", "-c", p(&cfg)])), 4);

    // 5: a constant prediction has no correlation
    let n = std::fs::read_to_string(&gold).unwrap().lines().count() - 1;
    let flat = tmp.path().join("flat.tsv");
    std::fs::write(&flat, "4\t4\n".repeat(n)).unwrap();
    let out = affect(&["score", "--gold", p(&gold), "--submission", p(&flat)]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn named_encoders_need_weights() {
    let config = TOY.replace("name = \"toy\"\npooling = \"mean_tokens\"", "name = \"roberta-base\"\npooling = \"cls_token\"");
    let (_tmp, cfg) = workspace(&config);
    let out = Command::new(env!("CARGO_BIN_EXE_affect"))
        .args(["train", "-c", p(&cfg)])
        .env_remove("AFFECT_WEIGHTS_DIR")
        .output()
        .unwrap();
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("AFFECT_WEIGHTS_DIR"));

    let native = config.replace("cls_token", "native_sentence");
    std::fs::write(&cfg, native).unwrap();
    assert_eq!(code(&affect(&["train", "-c", p(&cfg)])), 2);
}

#[test]
fn local_checkpoints_run_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("tiny");
    write_random_checkpoint(&ckpt, &tiny_config(16, 1), 3).unwrap();
    let config = TOY
        .replace("name = \"toy\"", &format!("name = \"local:{}\"\nmax_tokens = 64", ckpt.display()))
        .replace("epochs = 30", "epochs = 2");
    let (work, cfg) = workspace(&config);
    let out = affect(&["run", "-c", p(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(work.path().join("run/submission.tsv")).unwrap().lines().count(), 50);
}
