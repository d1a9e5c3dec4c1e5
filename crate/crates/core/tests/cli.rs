use std::path::Path;
use std::process::{Command, Output};

fn prefscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefscale"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

const QUICK: [&str; 12] = [
    "--steps",
    "6000",
    "--budget",
    "60",
    "--set",
    "ppo_horizon=512",
    "--set",
    "ppo_epochs=2",
    "--set",
    "reward_epochs=2",
    "--set",
    "eval_episodes=2",
];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend_from_slice(&QUICK);
    args.extend_from_slice(extra);
    prefscale(&args)
}

#[test]
fn demo_fraction_above_half_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&dir.path().join("r"), &["--demo-fraction", "0.6"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("0-0.5"), "{}", text(&out.stderr));
    assert!(!dir.path().join("r").exists());
}

#[test]
fn unknown_flags_and_keys_are_usage_errors() {
    assert_eq!(prefscale(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(prefscale(&["train", "--set", "nope=1"]).status.code(), Some(2));
    assert_eq!(prefscale(&["train", "--labeler", "crowd"]).status.code(), Some(2));
    assert_eq!(prefscale(&["train", "--paper-budgets", "999"]).status.code(), Some(2));
    assert_eq!(prefscale(&["train", "--labeler", "human_ui"]).status.code(), Some(2));
    assert_eq!(prefscale(&["--help"]).status.code(), Some(0));
}

#[test]
fn faithful_budget_violation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&dir.path().join("r"), &["--faithful-budget"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("1e-4"));
}

#[test]
fn config_file_wins_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    std::fs::write(&cfg, "# comment\nseed = 5\ndemo_fraction = 0.9\n").unwrap();
    let out = train(&dir.path().join("r"), &["--seed", "1", "--config", cfg.to_str().unwrap()]);
    // the file's demo_fraction is out of range, so validation fails after the merge
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("overrides the flag value for 'seed'"), "{err}");
    assert!(err.contains("0-0.5"), "{err}");
}

#[test]
fn train_eval_bench_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let extra = ["--labeler", "oracle_scaled", "--demo-fraction", "0.3", "--seed", "3"];
    let out = train(&a, &extra);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("run complete"));
    for f in ["config.txt", "metrics.csv", "preferences.db", "ledger.json", "summary.json", "checkpoints/policy_final.ckpt"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(train(&b, &extra).status.code(), Some(0));
    let metrics = std::fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics, std::fs::read(b.join("metrics.csv")).unwrap());
    assert!(text(&metrics).starts_with("step,true_return,pred_return,labels_so_far,human_labels,estimator_labels\n"));

    let json = dir.path().join("eval.json");
    let ckpt = a.join("checkpoints/policy_final.ckpt");
    let out = prefscale(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "2", "--out", json.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["env"], "velocity_runner");
    assert!(v["mean_return"].as_f64().unwrap().is_finite());

    let db = a.join("preferences.db");
    let out = prefscale(&["estimator-bench", "--db", db.to_str().unwrap(), "--seeds", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let report = text(&out.stdout);
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("scenario,method,mse_mean,mse_std,chosen"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split(',').count() == 5 && r.starts_with("velocity_runner_70,")));
    assert_eq!(
        prefscale(&["estimator-bench", "--db", db.to_str().unwrap(), "--split", "60"]).status.code(),
        Some(2)
    );

    let out = prefscale(&["replay", "--db", db.to_str().unwrap(), "--index", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let replay = text(&out.stdout);
    assert!(replay.starts_with("record 0 env velocity_runner"));
    assert!(replay.contains("left: 25 frames"));
    assert_eq!(prefscale(&["replay", "--db", db.to_str().unwrap(), "--index", "-1"]).status.code(), Some(2));
    assert_eq!(prefscale(&["replay", "--db", db.to_str().unwrap(), "--index", "100000"]).status.code(), Some(1));
}

#[test]
fn bench_refuses_small_databases() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("tiny.db");
    std::fs::write(&db, "").unwrap();
    let out = prefscale(&["estimator-bench", "--db", db.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("at least 50"));
}
