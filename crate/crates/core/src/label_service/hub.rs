use std::collections::{BTreeMap, HashSet};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::envlib::{trace_frame, EnvKind};
use crate::trajectory::Segment;

pub const SCHEMA_VERSION: u32 = 1;

/// What a labeller sees for one query. Carries no reward information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPayload {
    pub schema_version: u32,
    pub query_id: u64,
    pub env: EnvKind,
    /// One `[x, y]` point per step of the left segment.
    pub left_trace: Vec<[f64; 2]>,
    pub right_trace: Vec<[f64; 2]>,
    pub created_at: u64,
}

pub fn segment_trace(env: EnvKind, segment: &Segment) -> Vec<[f64; 2]> {
    segment
        .transitions()
        .iter()
        .map(|t| trace_frame(env, &t.observation))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub query_id: u64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub steps_done: u64,
    pub labels_done: usize,
    pub budget: usize,
    pub human_count: usize,
    pub estimator_count: usize,
    pub latest_mean_return: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    OutOfRange,
    UnknownQuery,
    AlreadyAnswered,
    NoActiveRun,
}

#[derive(Debug, Default)]
struct HubState {
    active: bool,
    next_id: u64,
    pending: BTreeMap<u64, QueryPayload>,
    answers: BTreeMap<u64, f64>,
    closed: HashSet<u64>,
    accepted: usize,
    status: StatusSnapshot,
}

/// Rendezvous between the elicitation worker, which blocks on a query, and the
/// HTTP handlers, which serve queries and accept answers.
#[derive(Debug, Default)]
pub struct LabelHub {
    state: Mutex<HubState>,
    answered: Condvar,
}

impl LabelHub {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, HubState> {
        self.state.lock().expect("label hub poisoned")
    }

    pub fn set_active(&self, active: bool) {
        let mut s = self.lock();
        s.active = active;
        if !active {
            s.pending.clear();
        }
        self.answered.notify_all();
    }

    pub fn is_active(&self) -> bool {
        self.lock().active
    }

    /// Registers a query and returns its id.
    pub fn open_query(&self, env: EnvKind, left: &Segment, right: &Segment, created_at: u64) -> u64 {
        let mut s = self.lock();
        let id = s.next_id;
        s.next_id += 1;
        s.pending.insert(
            id,
            QueryPayload {
                schema_version: SCHEMA_VERSION,
                query_id: id,
                env,
                left_trace: segment_trace(env, left),
                right_trace: segment_trace(env, right),
                created_at,
            },
        );
        id
    }

    /// Blocks until `id` is answered, the hub is deactivated, or `timeout` passes.
    /// An expired query is withdrawn; later answers to it are rejected.
    pub fn wait_label(&self, id: u64, timeout: Duration) -> Option<f64> {
        let deadline = Instant::now() + timeout;
        let mut s = self.lock();
        loop {
            if let Some(z) = s.answers.remove(&id) {
                return Some(z);
            }
            let now = Instant::now();
            if now >= deadline || !s.active {
                s.pending.remove(&id);
                s.closed.insert(id);
                return None;
            }
            s = self.answered.wait_timeout(s, deadline - now).expect("label hub poisoned").0;
        }
    }

    /// Oldest unanswered query, unchanged until it is answered or withdrawn.
    pub fn oldest_pending(&self) -> Result<Option<QueryPayload>, Rejection> {
        let s = self.lock();
        if !s.active {
            return Err(Rejection::NoActiveRun);
        }
        Ok(s.pending.values().next().cloned())
    }

    pub fn submit(&self, submission: LabelSubmission) -> Result<(), Rejection> {
        if !(0.0..=1.0).contains(&submission.z) {
            return Err(Rejection::OutOfRange);
        }
        let mut s = self.lock();
        if s.pending.remove(&submission.query_id).is_none() {
            return Err(if s.closed.contains(&submission.query_id) {
                Rejection::AlreadyAnswered
            } else {
                Rejection::UnknownQuery
            });
        }
        s.closed.insert(submission.query_id);
        s.answers.insert(submission.query_id, submission.z);
        s.accepted += 1;
        self.answered.notify_all();
        Ok(())
    }

    /// Answers accepted over the hub's lifetime.
    pub fn accepted(&self) -> usize {
        self.lock().accepted
    }

    pub fn pending_count(&self) -> usize {
        self.lock().pending.len()
    }

    pub fn update_status(&self, f: impl FnOnce(&mut StatusSnapshot)) {
        f(&mut self.lock().status);
    }

    pub fn status(&self) -> StatusSnapshot {
        self.lock().status
    }
}
