use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "epoch,real_episodes,real_steps,success_rate,critic_loss,actor_loss,wall_seconds";

fn kaleido(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kaleido"))
        .args(args)
        .output()
        .expect("spawn kaleido")
}

fn small_train(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec![
        "train", "--env", "reach2d", "--seed", "7", "--epochs", "3", "--ker-n", "8", "--ker-mode", "store",
        "--ger-k", "4", "--ger-epsilons", "0,0.0125,0.025,0.0375", "--out", out, "-q",
        "--set", "updates_per_cycle=4", "--set", "eval_episodes=3",
    ];
    args.extend_from_slice(extra);
    kaleido(&args)
}

#[test]
fn train_writes_reproducible_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(small_train(&a, &[]).status.success());
    assert!(small_train(&b, &[]).status.success());
    let text = fs::read_to_string(&a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("3,48,2400,"));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# base\nepochs = 9\nseed = 1\neval_episodes = 2 # tiny\nupdates_per_cycle = 2\n").unwrap();
    let out = dir.path().join("run.csv");
    let status = kaleido(&[
        "train", "--config", cfg.to_str().unwrap(), "--epochs", "2", "--out", out.to_str().unwrap(), "-q",
    ])
    .status;
    assert!(status.success());
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 3);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_train(&dir.path().join("x.csv"), &["--set", "ger_epsilons=0,0.01,0.02,0.05"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = kaleido(&["train", "--env", "reach9d", "--epochs", "1"]);
    assert!(!out.status.success());

    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = small_train(&blocker.join("run.csv"), &[]);
    assert!(!out.status.success());
}

#[test]
fn csv_to_stdout_without_out() {
    let out = kaleido(&[
        "train", "--epochs", "1", "-q", "--ker-n", "0", "--set", "updates_per_cycle=1", "--set", "eval_episodes=1",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().next(), Some(HEADER));
    assert_eq!(stdout.lines().count(), 2);
}

#[test]
fn matrix_writes_runs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("matrix.cfg");
    fs::write(
        &spec,
        "seeds = 1, 2\nepochs = 2\neval_episodes = 2\nupdates_per_cycle = 2\n\
         variant.her.ker_n = 0\nvariant.her.ger_k = 1\nvariant.her.ger_epsilons = 0\n\
         variant.full.ker_n = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("results");
    let out = kaleido(&["matrix", "--spec", spec.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["her_seed1.csv", "her_seed2.csv", "full_seed1.csv", "full_seed2.csv", "summary.csv"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("config,runs_ok,runs_failed,median_auc"));
}

#[test]
fn check_passes() {
    let out = kaleido(&["check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 7);
}
