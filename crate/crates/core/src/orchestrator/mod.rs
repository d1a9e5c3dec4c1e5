//! Experiment driver: rollouts, preference elicitation and reward fitting, with
//! label routing between the oracle or human and the estimator.
//!
//! Run directory layout:
//!
//! ```text
//! config.txt           flat key = value copy of the run configuration
//! metrics.csv          step,true_return,pred_return,labels_so_far,human_labels,estimator_labels
//! policy_stats.csv     per PPO update: kl, entropy, clip fraction
//! reward_curve.csv     per reward-model fit and epoch: mean loss
//! preferences.db       one JSON preference record per line
//! checkpoints/         policy_final.ckpt, reward_final.ckpt
//! ledger.json          label accounting
//! estimator_report.csv scenario,method,mse_mean,mse_std,chosen
//! summary.json         greedy evaluation return and label counts
//! FAILED               present only if the run aborted
//! ```

mod config;
pub mod persist;
mod routing;
mod run;
mod snapshot;

pub use config::{Labeler, Mode, RunConfig, DEFAULT_BUDGET, FAITHFUL_RATIO, MAX_DEMO_FRACTION, PAPER_BUDGETS};
pub use routing::{schedule_queries, EstimatorFitRecord, LabelLedger, RoutePlan, Slot, Substitution};
pub use run::{
    evaluate_greedy, run_experiment, MetricsRow, RunArtifacts, RunSummary, FAILED_MARKER, METRICS_HEADER,
    POLICY_STATS_HEADER, REWARD_CURVE_HEADER,
};
pub use snapshot::{checksum, ParamSnapshot, SnapshotCell};
