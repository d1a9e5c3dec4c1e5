use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use prefscale::envlib::EnvKind;
use prefscale::label_service::LabelHub;
use prefscale::oracle::LabelSource;
use prefscale::orchestrator::persist::load_db;
use prefscale::orchestrator::{run_experiment, Labeler, Mode, RunConfig, FAILED_MARKER, METRICS_HEADER};
use prefscale::policy::PpoConfig;

fn small(labeler: Labeler, seed: u64) -> RunConfig {
    RunConfig {
        labeler,
        seed,
        total_steps: 6_000,
        label_budget: 40,
        ppo: PpoConfig {
            horizon: 512,
            epochs: 2,
            ..PpoConfig::default()
        },
        reward_epochs: 2,
        fit_interval: 5,
        eval_episodes: 2,
        ..RunConfig::default()
    }
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn baseline_run_has_no_preferences() {
    let tmp = tempfile::tempdir().unwrap();
    let run = run_experiment(&small(Labeler::TrueRewardBaseline, 1), tmp.path(), None).unwrap();
    assert!(run.preferences.is_empty());
    assert_eq!(run.ledger.total(), 0);
    assert!(read(tmp.path(), "preferences.db").is_empty());
    let metrics = String::from_utf8(read(tmp.path(), "metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some(METRICS_HEADER));
    for name in ["config.txt", "ledger.json", "estimator_report.csv", "summary.json", "checkpoints/policy_final.ckpt"] {
        assert!(tmp.path().join(name).exists(), "{name}");
    }
    assert!(!tmp.path().join(FAILED_MARKER).exists());
}

#[test]
fn sync_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = small(Labeler::OracleScaled, 7);
    cfg.demo_fraction = 0.3;
    run_experiment(&cfg, a.path(), None).unwrap();
    run_experiment(&cfg, b.path(), None).unwrap();
    for name in [
        "metrics.csv",
        "policy_stats.csv",
        "reward_curve.csv",
        "preferences.db",
        "ledger.json",
        "checkpoints/policy_final.ckpt",
        "checkpoints/reward_final.ckpt",
    ] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
}

#[test]
fn run_is_reconstructible_from_its_config_copy() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small(Labeler::OracleHard, 3);
    run_experiment(&cfg, a.path(), None).unwrap();
    let text = String::from_utf8(read(a.path(), "config.txt")).unwrap();
    let copy = RunConfig::from_file_str(&text).unwrap();
    assert_eq!(copy, cfg);
    run_experiment(&copy, b.path(), None).unwrap();
    assert_eq!(read(a.path(), "metrics.csv"), read(b.path(), "metrics.csv"));
}

#[test]
fn ledger_matches_routing_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Labeler::OracleScaled, 2);
    cfg.demo_fraction = 0.3;
    let run = run_experiment(&cfg, tmp.path(), None).unwrap();
    let l = &run.ledger;
    assert!(l.is_consistent());
    assert_eq!(l.total(), 40);
    assert_eq!(l.estimator_count, 12, "substitutions: {:?}", l.substitutions);
    assert_eq!(l.human_count, 28);
    let db = load_db(&tmp.path().join("preferences.db")).unwrap();
    assert_eq!(db.len(), 40);
    assert_eq!(db.iter().filter(|r| r.source == LabelSource::Estimator).count(), 12);
    let on_disk: serde_json::Value = serde_json::from_slice(&read(tmp.path(), "ledger.json")).unwrap();
    assert_eq!(on_disk["human_count"], 28);
    assert_eq!(on_disk["estimator_count"], 12);
    let report = String::from_utf8(read(tmp.path(), "estimator_report.csv")).unwrap();
    assert_eq!(report.lines().next(), Some("scenario,method,mse_mean,mse_std,chosen"));
    assert_eq!(report.lines().count(), 3);
}

#[test]
fn closed_gate_routes_everything_to_the_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Labeler::OracleScaled, 2);
    cfg.demo_fraction = 0.3;
    cfg.mse_gate = 0.0;
    let run = run_experiment(&cfg, tmp.path(), None).unwrap();
    assert_eq!(run.ledger.estimator_count, 0);
    assert_eq!(run.ledger.human_count, 40);
    assert_eq!(run.ledger.substitutions.len(), 12);
    assert!(run.ledger.substitutions.iter().all(|s| s.reason.contains("gate")));
}

#[test]
fn faithful_budget_is_enforced() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Labeler::OracleScaled, 2);
    cfg.faithful_budget = true;
    assert!(run_experiment(&cfg, tmp.path(), None).is_err());
    cfg.total_steps = 10_000;
    cfg.label_budget = 1;
    let run = run_experiment(&cfg, tmp.path(), None).unwrap();
    assert!(run.ledger.total() as f64 / run.summary.steps as f64 <= 1e-4);
}

#[test]
fn failure_leaves_marker_and_partial_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Labeler::OracleScaled, 2);
    // segments longer than an episode never reach the queue
    cfg.segment_length = 500;
    cfg.segment_stride = 500;
    assert!(run_experiment(&cfg, tmp.path(), None).is_err());
    assert!(tmp.path().join(FAILED_MARKER).exists());
    assert!(tmp.path().join("metrics.csv").exists());
}

#[test]
fn async_run_conserves_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Labeler::OracleScaled, 4);
    cfg.mode = Mode::Async;
    cfg.demo_fraction = 0.3;
    let run = run_experiment(&cfg, tmp.path(), None).unwrap();
    assert!(run.ledger.is_consistent());
    assert_eq!(run.ledger.total(), 40);
    assert_eq!(run.preferences.len(), 40);
    assert!(run.summary.snapshots_published >= 1);
    assert_eq!(load_db(&tmp.path().join("preferences.db")).unwrap().len(), 40);
}

#[test]
fn human_ui_without_service_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_experiment(&small(Labeler::HumanUi, 0), tmp.path(), None).is_err());
}

/// A scripted labeller that only answers after seeing the rollout advance while its
/// query is pending.
#[test]
fn rollouts_continue_while_a_human_query_waits() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        env: EnvKind::VelocityRunner,
        total_steps: 30_000,
        label_budget: 3,
        query_timeout_secs: 60,
        ..small(Labeler::HumanUi, 5)
    };
    let hub = Arc::new(LabelHub::new());
    let client = {
        let hub = Arc::clone(&hub);
        std::thread::spawn(move || {
            let deadline = Instant::now() + Duration::from_secs(120);
            let mut answered = 0;
            let mut advanced_while_pending = 0;
            while Instant::now() < deadline && answered < 3 {
                match hub.oldest_pending() {
                    Ok(Some(q)) => {
                        let seen = hub.status().steps_done;
                        let wait_until = Instant::now() + Duration::from_secs(10);
                        while hub.status().steps_done == seen && Instant::now() < wait_until {
                            std::thread::sleep(Duration::from_millis(5));
                        }
                        if hub.status().steps_done > seen {
                            advanced_while_pending += 1;
                        }
                        hub.submit(prefscale::label_service::LabelSubmission { query_id: q.query_id, z: 0.87 }).unwrap();
                        answered += 1;
                    }
                    _ => std::thread::sleep(Duration::from_millis(2)),
                }
            }
            (answered, advanced_while_pending)
        })
    };
    let run = run_experiment(&cfg, tmp.path(), Some(Arc::clone(&hub))).unwrap();
    let (answered, advanced) = client.join().unwrap();
    assert_eq!(answered, 3);
    assert!(advanced >= 1, "rollout never advanced while a query was pending");
    let human: Vec<_> = run.preferences.iter().filter(|r| r.source == LabelSource::HumanUi).collect();
    assert_eq!(human.len(), 3);
    assert!(human.iter().all(|r| r.z.value() == 0.87));
    assert_eq!(run.ledger.human_count, 3);
    assert!(!hub.is_active());
}
