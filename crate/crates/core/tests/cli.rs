//! End-to-end checks of the command-line binary: exit codes, file outputs,
//! and the train -> dump -> fit -> score pipeline.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_statewatch"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn statewatch")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("statewatch_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["--version"][..], &["train-policy", "--help"][..]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(0), "args {args:?}: {}", stderr(&out));
    }
}

#[test]
fn usage_mistakes_exit_one() {
    // No subcommand, unknown subcommand, unknown flag.
    for args in [&[][..], &["frobnicate"][..], &["train-policy", "--bogus"][..]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "args {args:?}");
    }
}

#[test]
fn config_errors_exit_one_and_missing_inputs_exit_two() {
    let dir = tmp_dir("errs");
    // Invalid environment name is a configuration problem.
    let out = run(&["train-policy", "--env", "mars", "--out-dir", path_str(&dir)]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    // Contaminating dump slots without an outlier spec is a configuration
    // problem too.
    let out = run(&[
        "train-policy",
        "--iterations",
        "1",
        "--n-envs",
        "2",
        "--horizon",
        "8",
        "--out-dir",
        path_str(&dir),
        "--dump",
        "d.csv",
        "--dump-contaminated",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    // A missing input file is a runtime failure.
    let out = run(&[
        "fit",
        "--trajectories",
        path_str(&dir.join("absent.csv")),
        "--policy",
        path_str(&dir.join("absent.json")),
        "--out-dir",
        path_str(&dir),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    // Unknown keys in an experiment config file are configuration problems.
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "volume = 11\n").unwrap();
    let out = run(&["eval-exp", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("volume"), "{}", stderr(&out));

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn pipeline_flags_contaminated_trajectories() {
    let dir = tmp_dir("pipeline");

    // Train briefly and dump a clean rollout set for fitting.
    let out = run(&[
        "train-policy",
        "--iterations",
        "25",
        "--n-envs",
        "6",
        "--horizon",
        "48",
        "--seed",
        "0",
        "--out-dir",
        path_str(&dir),
        "--dump",
        "clean.csv",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let policy = dir.join("policy.json");
    assert!(policy.is_file());
    assert!(dir.join("returns.csv").is_file());

    // Fit a detector on the clean dump.
    let out = run(&[
        "fit",
        "--trajectories",
        path_str(&dir.join("clean.csv")),
        "--policy",
        path_str(&policy),
        "--method",
        "md",
        "--k",
        "8",
        "--out-dir",
        path_str(&dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let model = dir.join("model.json");
    assert!(model.is_file());

    // Dump again with the first two slots fed foreign states.
    let dirty_dir = dir.join("dirty");
    let out = run(&[
        "train-policy",
        "--iterations",
        "25",
        "--n-envs",
        "6",
        "--horizon",
        "48",
        "--seed",
        "0",
        "--out-dir",
        path_str(&dirty_dir),
        "--dump",
        "dirty.csv",
        "--dump-contaminated",
        "2",
        "--dump-outlier",
        "ood:chain",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    // Score the dirty dump with the clean-fit detector: exactly the two
    // contaminated trajectories should be flagged.
    let out = run(&[
        "score",
        "--model",
        path_str(&model),
        "--policy",
        path_str(&policy),
        "--trajectories",
        path_str(&dirty_dir.join("dirty.csv")),
        "--out-dir",
        path_str(&dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("2 of 6 trajectories flagged"), "{text}");
    assert!(text.contains("trajectory 0: FLAGGED"), "{text}");
    assert!(text.contains("trajectory 1: FLAGGED"), "{text}");
    assert!(text.contains("trajectory 2: clean"), "{text}");

    let scores = std::fs::read_to_string(dir.join("scores.csv")).unwrap();
    assert!(scores.starts_with("env,t,action,distance,label\n"));

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn experiment_subcommands_write_their_artifacts() {
    let dir = tmp_dir("exp");
    let eval_dir = dir.join("eval");
    // A degenerate one-cell grid keeps this fast.
    let out = run(&[
        "eval-exp",
        "--out-dir",
        path_str(&eval_dir),
        "--methods",
        "md",
        "--outliers",
        "ood:chain",
        "--alphas",
        "0.05",
        "--lambdas",
        "0",
        "--seed",
        "0",
        "--n-fit",
        "256",
        "--n-test",
        "64",
        "--iterations",
        "6",
        "--n-envs",
        "4",
        "--horizon",
        "32",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(eval_dir.join("eval.csv").is_file());
    assert!(eval_dir.join("manifest.json").is_file());
    assert!(eval_dir.join("config_used.txt").is_file());

    let train_dir = dir.join("train");
    let out = run(&[
        "train-exp",
        "--out-dir",
        path_str(&train_dir),
        "--train-methods",
        "auto,random",
        "--seed",
        "0",
        "--iterations",
        "6",
        "--n-envs",
        "4",
        "--horizon",
        "32",
        "--n-c",
        "64",
        "--emit-svg",
        "true",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(train_dir.join("curves.csv").is_file());
    assert!(train_dir.join("curves_avg.csv").is_file());
    assert!(train_dir.join("mean_return.svg").is_file());

    let _ = std::fs::remove_dir_all(&dir);
}
