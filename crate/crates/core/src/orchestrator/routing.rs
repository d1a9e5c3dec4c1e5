//! Query timing, the human/estimator routing plan, and label accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::LabelSource;

/// Env-step indices at which queries are issued: `budget` points spaced
/// `(total − warmup) / budget` apart, the first at `warmup`.
pub fn schedule_queries(total_steps: u64, budget: usize, warmup_steps: u64) -> Result<Vec<u64>> {
    if budget == 0 {
        return Err(Error::Config("query budget must be at least 1".into()));
    }
    if warmup_steps >= total_steps {
        return Err(Error::Config(format!(
            "warmup of {warmup_steps} steps leaves no room in {total_steps} steps"
        )));
    }
    let span = total_steps - warmup_steps;
    if budget as u64 > span {
        return Err(Error::Config(format!(
            "{budget} queries cannot be spread over {span} post-warmup steps"
        )));
    }
    let b = budget as u128;
    Ok((0..b)
        .map(|k| warmup_steps + (k * span as u128 / b) as u64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Human,
    Estimator,
}

/// Which source each of the `budget` queries is meant to use.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutePlan {
    pub slots: Vec<Slot>,
    /// Leading human-only queries.
    pub initial_human: usize,
    pub estimator_total: usize,
}

impl RoutePlan {
    /// `round(ρ·B)` estimator slots; the first `⌊init_share·(B − round(ρ·B))⌋` slots are
    /// human, the estimator slots are then spread evenly over the rest.
    pub fn new(budget: usize, demo_fraction: f64, init_share: f64) -> Self {
        let estimator_total = (demo_fraction * budget as f64).round() as usize;
        let human_total = budget - estimator_total;
        let initial_human = ((human_total as f64 * init_share) + 1e-9).floor() as usize;
        let rest = budget - initial_human;
        let mut slots = vec![Slot::Human; initial_human];
        for k in 0..rest {
            let hit = (k + 1) * estimator_total / rest > k * estimator_total / rest;
            slots.push(if hit { Slot::Estimator } else { Slot::Human });
        }
        Self {
            slots,
            initial_human,
            estimator_total,
        }
    }

    pub fn budget(&self) -> usize {
        self.slots.len()
    }

    pub fn human_total(&self) -> usize {
        self.budget() - self.estimator_total
    }

    pub fn slot(&self, query_index: usize) -> Slot {
        self.slots.get(query_index).copied().unwrap_or(Slot::Human)
    }
}

/// A planned estimator slot answered by the human/oracle side instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substitution {
    pub query_index: usize,
    pub step: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorFitRecord {
    pub query_index: usize,
    pub human_labels: usize,
    pub method: String,
    pub ols_mse: f64,
    pub svr_mse: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelLedger {
    pub budget: usize,
    pub planned_estimator: usize,
    pub initial_human: usize,
    /// Labels from the human or the oracle standing in for one.
    pub human_count: usize,
    pub estimator_count: usize,
    pub query_steps: Vec<u64>,
    pub sources: Vec<LabelSource>,
    pub substitutions: Vec<Substitution>,
    pub estimator_fits: Vec<EstimatorFitRecord>,
}

impl LabelLedger {
    pub fn new(plan: &RoutePlan) -> Self {
        Self {
            budget: plan.budget(),
            planned_estimator: plan.estimator_total,
            initial_human: plan.initial_human,
            ..Default::default()
        }
    }

    pub fn record(&mut self, step: u64, source: LabelSource) {
        if source == LabelSource::Estimator {
            self.estimator_count += 1;
        } else {
            self.human_count += 1;
        }
        self.query_steps.push(step);
        self.sources.push(source);
    }

    pub fn total(&self) -> usize {
        self.human_count + self.estimator_count
    }

    pub fn estimator_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.estimator_count as f64 / self.total() as f64
        }
    }

    /// `human + estimator` matches the per-label source list.
    pub fn is_consistent(&self) -> bool {
        self.total() == self.sources.len()
            && self.sources.len() == self.query_steps.len()
            && self.estimator_count == self.sources.iter().filter(|s| **s == LabelSource::Estimator).count()
    }
}
