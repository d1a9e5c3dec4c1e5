use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::envlib::{reset, EnvKind, EnvSpec, EnvState};
use crate::error::{Error, Result};
use crate::estimator::{self, EstimatorConfig, EstimatorDataset, EstimatorModel, SvrConfig};
use crate::label_service::LabelHub;
use crate::numerics::{RngStream, StreamId};
use crate::oracle::{LabelSource, PreferenceRecord, PreferenceScale, ScalingContext, SyntheticOracle};
use crate::orchestrator::config::{Labeler, Mode, RunConfig};
use crate::orchestrator::persist::{record_line, save_policy, save_reward_model};
use crate::orchestrator::routing::{schedule_queries, EstimatorFitRecord, LabelLedger, RoutePlan, Slot, Substitution};
use crate::orchestrator::snapshot::SnapshotCell;
use crate::policy::{Policy, PolicyParams, RolloutBuffer, UpdateStats};
use crate::reward_model::RewardPredictor;
use crate::trajectory::{extract_segments, featurize_pair, Segment, SegmentQueue, Transition};

pub const METRICS_HEADER: &str = "step,true_return,pred_return,labels_so_far,human_labels,estimator_labels";
pub const POLICY_STATS_HEADER: &str = "step,mean_return_true,mean_return_pred,kl,entropy,clip_fraction,kl_early_stop";
pub const REWARD_CURVE_HEADER: &str = "fit,labels,epoch,mean_loss";
pub const FAILED_MARKER: &str = "FAILED";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    /// Mean true return of episodes finished in the last rollout chunk.
    pub true_return: f64,
    /// Mean summed raw reward-model output over the same episodes (true reward for the baseline).
    pub pred_return: f64,
    pub labels_so_far: usize,
    pub human_labels: usize,
    pub estimator_labels: usize,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.true_return, self.pred_return, self.labels_so_far, self.human_labels, self.estimator_labels
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub env: EnvKind,
    pub labeler: String,
    pub seed: u64,
    pub steps: u64,
    /// Mean true return of greedy (mean-action) evaluation episodes after training.
    pub final_return: f64,
    pub final_return_std: f64,
    pub labels: usize,
    pub human_labels: usize,
    pub estimator_labels: usize,
    pub substitutions: usize,
    pub snapshots_published: u64,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub ledger: LabelLedger,
    pub metrics: Vec<MetricsRow>,
    pub preferences: Vec<PreferenceRecord>,
    pub policy: PolicyParams,
    pub reward_model: Option<RewardPredictor>,
}

impl RunArtifacts {
    pub fn final_return(&self) -> f64 {
        self.summary.final_return
    }
}

struct Csv {
    w: BufWriter<File>,
}

impl Csv {
    fn create(path: &Path, header: &str) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{header}")?;
        w.flush()?;
        Ok(Self { w })
    }

    fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.w, "{line}")?;
        self.w.flush()?;
        Ok(())
    }
}

enum RewardChannel {
    True,
    Predicted { model: RewardPredictor, snapshot: u64 },
}

impl RewardChannel {
    /// Swaps in newer reward-model parameters if the cell has them.
    fn refresh(&mut self, cell: &SnapshotCell) {
        if let RewardChannel::Predicted { model, snapshot } = self {
            let snap = cell.read();
            if snap.id != *snapshot {
                debug_assert!(snap.verify());
                model.net.params_mut().copy_from_slice(&snap.params);
                model.output_norm = snap.norm;
                *snapshot = snap.id;
            }
        }
    }

    /// False until the reward model has been fit once; PPO waits for that.
    fn is_trained(&self) -> bool {
        match self {
            RewardChannel::True => true,
            RewardChannel::Predicted { snapshot, .. } => *snapshot > 0,
        }
    }
}

struct Chunk {
    buffer: RolloutBuffer,
    segments: Vec<Segment>,
    /// `(true return, predicted return)` of episodes that ended in this chunk.
    episodes: Vec<(f64, f64)>,
}

struct Rollout {
    spec: EnvSpec,
    env: EnvState,
    obs: Vec<f64>,
    policy: Policy,
    episode_rng: RngStream,
    act_rng: RngStream,
    update_rng: RngStream,
    episode: Vec<Transition>,
    episode_id: u64,
    ep_true: f64,
    ep_pred: f64,
    steps: u64,
    segment_length: usize,
    segment_stride: usize,
}

impl Rollout {
    fn new(config: &RunConfig) -> Self {
        let spec = EnvSpec::new(config.env);
        let mut init_rng = RngStream::new(config.seed, StreamId::Init);
        let policy = Policy::new(spec.obs_dim, spec.act_dim, config.ppo, &mut init_rng);
        let mut episode_rng = RngStream::new(config.seed, StreamId::Environment);
        let (env, obs) = reset(&spec, episode_rng.next_u64());
        Self {
            spec,
            env,
            obs,
            policy,
            episode_rng,
            act_rng: RngStream::new(config.seed, StreamId::Policy),
            update_rng: RngStream::new(config.seed, StreamId::Shuffle),
            episode: Vec::new(),
            episode_id: 0,
            ep_true: 0.0,
            ep_pred: 0.0,
            steps: 0,
            segment_length: config.segment_length,
            segment_stride: config.segment_stride,
        }
    }

    fn collect(&mut self, n: usize, channel: &mut RewardChannel) -> Result<Chunk> {
        let mut buffer = RolloutBuffer::with_capacity(n);
        let mut segments = Vec::new();
        let mut episodes = Vec::new();
        let mut last_done = false;
        for _ in 0..n {
            let out = self.policy.act(&self.obs, &mut self.act_rng)?;
            let action = self.spec.clamp_action(&out.action);
            let (next, res) = self.env.step(&action)?;
            let (raw, fed) = match channel {
                RewardChannel::True => (res.true_reward, res.true_reward),
                RewardChannel::Predicted { model, .. } => {
                    let raw = model.predict_reward(&self.obs, &action)?;
                    (raw, model.normalize_raw(raw).value)
                }
            };
            if !fed.is_finite() {
                return Err(Error::NonFinite(format!("policy reward at step {}", self.steps)));
            }
            let obs = std::mem::replace(&mut self.obs, res.observation);
            buffer.push(obs.clone(), &out, fed, res.done);
            self.episode.push(Transition {
                observation: obs,
                action,
                true_reward: res.true_reward,
                predicted_reward: raw,
            });
            self.ep_true += res.true_reward;
            self.ep_pred += raw;
            self.steps += 1;
            self.env = next;
            last_done = res.done;
            if res.done {
                segments.extend(extract_segments(&self.episode, self.segment_length, self.segment_stride, self.episode_id));
                episodes.push((self.ep_true, self.ep_pred));
                self.episode.clear();
                self.episode_id += 1;
                self.ep_true = 0.0;
                self.ep_pred = 0.0;
                let (env, obs) = reset(&self.spec, self.episode_rng.next_u64());
                self.env = env;
                self.obs = obs;
            }
        }
        buffer.bootstrap_value = if last_done { 0.0 } else { self.policy.params.value(&self.obs)? };
        Ok(Chunk {
            buffer,
            segments,
            episodes,
        })
    }

    fn update(&mut self, buffer: &RolloutBuffer) -> UpdateStats {
        self.policy.ppo_update(buffer, &mut self.update_rng)
    }
}

/// Mean-action episodes on fresh seeds; returns mean and population std of true returns.
pub fn evaluate_greedy(params: &PolicyParams, env: EnvKind, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::Config("need at least one evaluation episode".into()));
    }
    let spec = EnvSpec::new(env);
    if params.obs_dim() != spec.obs_dim || params.act_dim() != spec.act_dim {
        return Err(Error::Dimension {
            expected: spec.obs_dim,
            got: params.obs_dim(),
        });
    }
    let mut seeds = RngStream::new(seed, StreamId::Custom(100));
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (mut state, mut obs) = reset(&spec, seeds.next_u64());
        let mut total = 0.0;
        while !state.is_done() {
            let a = params.mean_action(&obs)?;
            let (next, r) = state.step(&a)?;
            total += r.true_reward;
            obs = r.observation;
            state = next;
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

struct Elicitation {
    env: EnvKind,
    labeler: Labeler,
    schedule: Vec<u64>,
    plan: RoutePlan,
    ledger: LabelLedger,
    oracle: SyntheticOracle,
    query_rng: RngStream,
    split_rng: RngStream,
    human_records: Vec<PreferenceRecord>,
    estimator: Option<(EstimatorModel, f64)>,
    human_since_estimator_fit: usize,
    estimator_config: EstimatorConfig,
    mse_gate: f64,
    estimator_refit: usize,
    hub: Option<Arc<LabelHub>>,
    timeout: Duration,
}

impl Elicitation {
    fn new(config: &RunConfig, hub: Option<Arc<LabelHub>>) -> Result<Self> {
        let plan = RoutePlan::new(config.label_budget, config.demo_fraction, config.init_share);
        let schedule = schedule_queries(config.total_steps, config.label_budget, config.warmup_steps())?;
        let context = if config.context_window > 0 {
            ScalingContext::windowed(config.context_window)
        } else {
            ScalingContext::new()
        };
        let oracle = match config.labeler {
            Labeler::OracleHard => SyntheticOracle::Hard,
            _ => SyntheticOracle::Scaled(context),
        };
        Ok(Self {
            env: config.env,
            labeler: config.labeler,
            schedule,
            ledger: LabelLedger::new(&plan),
            plan,
            oracle,
            query_rng: RngStream::new(config.seed, StreamId::QuerySelection),
            split_rng: RngStream::new(config.seed, StreamId::EstimatorSplit),
            human_records: Vec::new(),
            estimator: None,
            human_since_estimator_fit: 0,
            estimator_config: EstimatorConfig {
                train_fraction: config.split_fraction,
                augment: true,
                svr: SvrConfig {
                    c: config.svr_c,
                    epsilon: config.svr_epsilon,
                    ..SvrConfig::default()
                },
            },
            mse_gate: config.mse_gate,
            estimator_refit: config.estimator_refit,
            hub,
            timeout: Duration::from_secs(config.query_timeout_secs),
        })
    }

    fn issued(&self) -> usize {
        self.ledger.total()
    }

    fn finished(&self) -> bool {
        self.issued() >= self.schedule.len()
    }

    fn due(&self, steps: u64) -> bool {
        !self.finished() && steps >= self.schedule[self.issued()]
    }

    fn fit_estimator(&mut self, query_index: usize) {
        let data = match EstimatorDataset::from_records(&self.human_records) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("estimator data rejected: {e}");
                return;
            }
        };
        match estimator::fit_and_select(&data, &self.estimator_config, &mut self.split_rng) {
            Ok(sel) => {
                let mse = sel.ols.mean.min(sel.svr.mean);
                log::info!(
                    "estimator fit on {} labels: ols {:.4} svr {:.4}, using {}",
                    self.human_records.len(),
                    sel.ols.mean,
                    sel.svr.mean,
                    sel.model.method()
                );
                self.ledger.estimator_fits.push(EstimatorFitRecord {
                    query_index,
                    human_labels: self.human_records.len(),
                    method: sel.model.method().to_string(),
                    ols_mse: sel.ols.mean,
                    svr_mse: sel.svr.mean,
                });
                self.estimator = Some((sel.model, mse));
                self.human_since_estimator_fit = 0;
            }
            Err(e) => log::warn!("estimator fit skipped: {e}"),
        }
    }

    fn gated_estimate(&self, left: &Segment, right: &Segment) -> std::result::Result<f64, String> {
        match &self.estimator {
            Some((m, mse)) if *mse <= self.mse_gate => Ok(m.predict(&featurize_pair(left, right))),
            Some((_, mse)) => Err(format!("estimator held-out mse {mse} above gate {}", self.mse_gate)),
            None => Err("estimator not fitted".into()),
        }
    }

    fn human_side(&mut self, left: &Segment, right: &Segment, step: u64) -> Result<(f64, LabelSource)> {
        match self.labeler {
            Labeler::OracleScaled | Labeler::OracleHard => {
                let z = self.oracle.label(left, right)?;
                Ok((z.value(), self.oracle.source()))
            }
            Labeler::HumanUi => {
                let hub = self.hub.as_ref().ok_or_else(|| Error::Config("human_ui labeler needs a label hub".into()))?;
                let id = hub.open_query(self.env, left, right, step);
                match hub.wait_label(id, self.timeout) {
                    Some(z) => {
                        self.oracle.observe(left, right)?;
                        Ok((z, LabelSource::HumanUi))
                    }
                    None => {
                        let q = self.issued();
                        match self.gated_estimate(left, right) {
                            Ok(z) => {
                                self.ledger.substitutions.push(Substitution {
                                    query_index: q,
                                    step,
                                    reason: "human timeout; estimator answered".into(),
                                });
                                Ok((z, LabelSource::Estimator))
                            }
                            Err(_) => {
                                self.ledger.substitutions.push(Substitution {
                                    query_index: q,
                                    step,
                                    reason: "human timeout; oracle answered".into(),
                                });
                                let z = self.oracle.label(left, right)?;
                                Ok((z.value(), self.oracle.source()))
                            }
                        }
                    }
                }
            }
            Labeler::TrueRewardBaseline => Err(Error::Config("baseline runs issue no queries".into())),
        }
    }

    fn sample(&mut self, queue: &SegmentQueue) -> Result<(Segment, Segment)> {
        queue.sample_pair(&mut self.query_rng)
    }

    fn label(&mut self, left: Segment, right: Segment, step: u64) -> Result<PreferenceRecord> {
        let k = self.issued();
        if self.plan.estimator_total > 0
            && k >= self.plan.initial_human
            && (self.estimator.is_none() || self.human_since_estimator_fit >= self.estimator_refit)
            && self.human_since_estimator_fit > 0
        {
            self.fit_estimator(k);
        }
        let (z, source) = match self.plan.slot(k) {
            Slot::Estimator => match self.gated_estimate(&left, &right) {
                Ok(z) => (z, LabelSource::Estimator),
                Err(reason) => {
                    log::warn!("query {k}: {reason}; asking the {} instead", self.labeler);
                    self.ledger.substitutions.push(Substitution {
                        query_index: k,
                        step,
                        reason,
                    });
                    self.human_side(&left, &right, step)?
                }
            },
            Slot::Human => self.human_side(&left, &right, step)?,
        };
        let record = PreferenceRecord {
            env: self.env,
            left,
            right,
            z: PreferenceScale::new(z)?,
            source,
            timestep: step,
        };
        if source.is_human_side() {
            self.human_records.push(record.clone());
            self.human_since_estimator_fit += 1;
        }
        self.ledger.record(step, source);
        Ok(record)
    }
}

struct Fitter {
    model: RewardPredictor,
    rng: RngStream,
    since_fit: usize,
    fits: usize,
    interval: usize,
    epochs: usize,
    minibatch: usize,
    curve: Option<Csv>,
}

impl Fitter {
    fn new(config: &RunConfig, curve: Option<Csv>) -> Self {
        let spec = EnvSpec::new(config.env);
        let mut init = RngStream::new(config.seed, StreamId::Custom(7));
        Self {
            model: RewardPredictor::new(spec.obs_dim, spec.act_dim, config.reward_step_size, &mut init),
            rng: RngStream::new(config.seed, StreamId::Custom(8)),
            since_fit: 0,
            fits: 0,
            interval: config.fit_interval,
            epochs: config.reward_epochs,
            minibatch: config.reward_minibatch,
            curve,
        }
    }

    fn due(&self) -> bool {
        self.since_fit >= self.interval
    }

    /// Warm-started refit on the whole database, then normalisation recalibrated on `segments`.
    fn fit<'a>(&mut self, db: &[PreferenceRecord], segments: impl IntoIterator<Item = &'a Segment>) -> Result<()> {
        let mb = self.minibatch.min(db.len());
        let curve = self.model.fit(db, self.epochs, mb, &mut self.rng)?;
        if let Some(csv) = self.curve.as_mut() {
            for (e, l) in curve.epoch_losses.iter().enumerate() {
                csv.row(&format!("{},{},{},{}", self.fits, db.len(), e, l))?;
            }
        }
        self.model.recalibrate(segments);
        self.since_fit = 0;
        self.fits += 1;
        Ok(())
    }
}

fn mean_or(values: impl Iterator<Item = f64>, fallback: f64) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        fallback
    } else {
        s / n as f64
    }
}

struct Outputs {
    metrics: Csv,
    stats: Csv,
    db: BufWriter<File>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        Ok(Self {
            metrics: Csv::create(&dir.join("metrics.csv"), METRICS_HEADER)?,
            stats: Csv::create(&dir.join("policy_stats.csv"), POLICY_STATS_HEADER)?,
            db: BufWriter::new(File::create(dir.join("preferences.db"))?),
        })
    }
}

fn append_record(db: &mut BufWriter<File>, record: &PreferenceRecord) -> Result<()> {
    writeln!(db, "{}", record_line(record))?;
    db.flush()?;
    Ok(())
}

struct Tracker {
    last_true: f64,
    last_pred: f64,
}

impl Tracker {
    fn row(
        &mut self,
        step: u64,
        chunk: &Chunk,
        human: usize,
        estimator: usize,
    ) -> MetricsRow {
        self.last_true = mean_or(chunk.episodes.iter().map(|e| e.0), self.last_true);
        self.last_pred = mean_or(chunk.episodes.iter().map(|e| e.1), self.last_pred);
        MetricsRow {
            step,
            true_return: self.last_true,
            pred_return: self.last_pred,
            labels_so_far: human + estimator,
            human_labels: human,
            estimator_labels: estimator,
        }
    }
}

fn stats_line(row: &MetricsRow, s: &UpdateStats) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        row.step, row.true_return, row.pred_return, s.approx_kl, s.entropy, s.clip_fraction, s.kl_early_stop
    )
}

struct Finished {
    rollout: Rollout,
    metrics: Vec<MetricsRow>,
    ledger: LabelLedger,
    human_records: Vec<PreferenceRecord>,
    db: Vec<PreferenceRecord>,
    reward_model: Option<RewardPredictor>,
    snapshots: u64,
}

fn run_sync(config: &RunConfig, dir: &Path) -> Result<Finished> {
    let mut out = Outputs::create(dir)?;
    let prefs = config.labeler.uses_preferences();
    let mut rollout = Rollout::new(config);
    let mut queue = SegmentQueue::new(config.queue_capacity);
    let mut elicit = if prefs { Some(Elicitation::new(config, None)?) } else { None };
    let mut fitter = if prefs {
        Some(Fitter::new(config, Some(Csv::create(&dir.join("reward_curve.csv"), REWARD_CURVE_HEADER)?)))
    } else {
        None
    };
    let cell = fitter
        .as_ref()
        .map(|f| SnapshotCell::new(f.model.net.params().to_vec(), f.model.output_norm));
    let mut channel = match &fitter {
        Some(f) => RewardChannel::Predicted {
            model: f.model.clone(),
            snapshot: 0,
        },
        None => RewardChannel::True,
    };
    let mut db = Vec::new();
    let mut metrics = Vec::new();
    let mut tracker = Tracker {
        last_true: 0.0,
        last_pred: 0.0,
    };
    while rollout.steps < config.total_steps {
        if let Some(cell) = &cell {
            channel.refresh(cell);
        }
        let trained = channel.is_trained();
        let n = (config.total_steps - rollout.steps).min(config.ppo.horizon as u64) as usize;
        let chunk = rollout.collect(n, &mut channel)?;
        if prefs {
            queue.extend(chunk.segments.iter().cloned());
        }
        if let (Some(el), Some(fit)) = (elicit.as_mut(), fitter.as_mut()) {
            while el.due(rollout.steps) {
                let (l, r) = match el.sample(&queue) {
                    Ok(p) => p,
                    Err(Error::NotReady { .. }) => break,
                    Err(e) => return Err(e),
                };
                let step = el.schedule[el.issued()];
                let rec = el.label(l, r, step)?;
                append_record(&mut out.db, &rec)?;
                db.push(rec);
                fit.since_fit += 1;
            }
            if fit.due() {
                fit.fit(&db, queue.iter())?;
                cell.as_ref()
                    .expect("cell exists with a fitter")
                    .publish(fit.model.net.params().to_vec(), fit.model.output_norm);
            }
        }
        let stats = if trained {
            rollout.update(&chunk.buffer)
        } else {
            UpdateStats::default()
        };
        let (h, e) = elicit
            .as_ref()
            .map_or((0, 0), |el| (el.ledger.human_count, el.ledger.estimator_count));
        let row = tracker.row(rollout.steps, &chunk, h, e);
        out.metrics.row(&row.csv())?;
        out.stats.row(&stats_line(&row, &stats))?;
        metrics.push(row);
    }
    if let Some(el) = elicit.as_ref() {
        if !el.finished() {
            return Err(Error::Worker(format!(
                "only {} of {} queries could be issued; the segment queue never filled",
                el.issued(),
                el.schedule.len()
            )));
        }
    }
    let (ledger, human_records) = match elicit {
        Some(el) => (el.ledger, el.human_records),
        None => (LabelLedger::default(), Vec::new()),
    };
    Ok(Finished {
        rollout,
        metrics,
        ledger,
        human_records,
        db,
        snapshots: cell.as_ref().map_or(0, |c| c.latest_id()),
        reward_model: fitter.map(|f| f.model),
    })
}

struct Shared {
    queue: Mutex<SegmentQueue>,
    steps: AtomicU64,
    rollout_done: AtomicBool,
    abort: AtomicBool,
    human: AtomicUsize,
    estimator: AtomicUsize,
}

fn run_async(config: &RunConfig, dir: &Path, hub: Option<Arc<LabelHub>>) -> Result<Finished> {
    let prefs = config.labeler.uses_preferences();
    let Outputs { mut metrics, mut stats, mut db } = Outputs::create(dir)?;
    let shared = Arc::new(Shared {
        queue: Mutex::new(SegmentQueue::new(config.queue_capacity)),
        steps: AtomicU64::new(0),
        rollout_done: AtomicBool::new(false),
        abort: AtomicBool::new(false),
        human: AtomicUsize::new(0),
        estimator: AtomicUsize::new(0),
    });
    let fitter = if prefs {
        Some(Fitter::new(config, Some(Csv::create(&dir.join("reward_curve.csv"), REWARD_CURVE_HEADER)?)))
    } else {
        None
    };
    let cell = Arc::new(match &fitter {
        Some(f) => SnapshotCell::new(f.model.net.params().to_vec(), f.model.output_norm),
        None => SnapshotCell::new(Vec::new(), Default::default()),
    });
    let channel = match &fitter {
        Some(f) => RewardChannel::Predicted {
            model: f.model.clone(),
            snapshot: 0,
        },
        None => RewardChannel::True,
    };

    let rollout_handle = {
        let shared = Arc::clone(&shared);
        let cell = Arc::clone(&cell);
        let hub = hub.clone();
        let config = config.clone();
        std::thread::Builder::new()
            .name("rollout".into())
            .spawn(move || -> Result<(Rollout, Vec<MetricsRow>)> {
                let mut channel = channel;
                let mut rollout = Rollout::new(&config);
                let mut rows = Vec::new();
                let mut tracker = Tracker {
                    last_true: 0.0,
                    last_pred: 0.0,
                };
                let result = (|| -> Result<()> {
                    while rollout.steps < config.total_steps && !shared.abort.load(Ordering::SeqCst) {
                        channel.refresh(&cell);
                        let trained = channel.is_trained();
                        let n = (config.total_steps - rollout.steps).min(config.ppo.horizon as u64) as usize;
                        let chunk = rollout.collect(n, &mut channel)?;
                        if prefs {
                            shared.queue.lock().expect("queue poisoned").extend(chunk.segments.iter().cloned());
                        }
                        shared.steps.store(rollout.steps, Ordering::SeqCst);
                        let s = if trained {
                            rollout.update(&chunk.buffer)
                        } else {
                            UpdateStats::default()
                        };
                        let row = tracker.row(
                            rollout.steps,
                            &chunk,
                            shared.human.load(Ordering::SeqCst),
                            shared.estimator.load(Ordering::SeqCst),
                        );
                        metrics.row(&row.csv())?;
                        stats.row(&stats_line(&row, &s))?;
                        if let Some(hub) = &hub {
                            hub.update_status(|st| {
                                st.steps_done = row.step;
                                st.latest_mean_return = Some(row.true_return);
                            });
                        }
                        rows.push(row);
                    }
                    Ok(())
                })();
                shared.rollout_done.store(true, Ordering::SeqCst);
                if result.is_err() {
                    shared.abort.store(true, Ordering::SeqCst);
                }
                result.map(|()| (rollout, rows))
            })
            .map_err(|e| Error::Worker(e.to_string()))?
    };

    let (tx, rx) = mpsc::channel::<PreferenceRecord>();
    let elicit_handle = if prefs {
        let shared = Arc::clone(&shared);
        let mut el = Elicitation::new(config, hub.clone())?;
        let hub = hub.clone();
        Some(
            std::thread::Builder::new()
                .name("elicitation".into())
                .spawn(move || -> Result<(LabelLedger, Vec<PreferenceRecord>)> {
                    let result = (|| -> Result<()> {
                        while !el.finished() && !shared.abort.load(Ordering::SeqCst) {
                            let done = shared.rollout_done.load(Ordering::SeqCst);
                            if !(el.due(shared.steps.load(Ordering::SeqCst)) || done) {
                                std::thread::sleep(Duration::from_millis(1));
                                continue;
                            }
                            let pair = el.sample(&shared.queue.lock().expect("queue poisoned"));
                            let (l, r) = match pair {
                                Ok(p) => p,
                                Err(Error::NotReady { have }) if !done => {
                                    log::debug!("queue holds {have} segment(s); waiting");
                                    std::thread::sleep(Duration::from_millis(1));
                                    continue;
                                }
                                Err(e) => return Err(e),
                            };
                            let step = el.schedule[el.issued()];
                            let rec = el.label(l, r, step)?;
                            shared.human.store(el.ledger.human_count, Ordering::SeqCst);
                            shared.estimator.store(el.ledger.estimator_count, Ordering::SeqCst);
                            if let Some(hub) = &hub {
                                let ledger = &el.ledger;
                                hub.update_status(|st| {
                                    st.labels_done = ledger.total();
                                    st.human_count = ledger.human_count;
                                    st.estimator_count = ledger.estimator_count;
                                });
                            }
                            if tx.send(rec).is_err() {
                                return Err(Error::Worker("reward fitter stopped".into()));
                            }
                        }
                        Ok(())
                    })();
                    drop(tx);
                    if result.is_err() {
                        shared.abort.store(true, Ordering::SeqCst);
                    }
                    result.map(|()| (el.ledger, el.human_records))
                })
                .map_err(|e| Error::Worker(e.to_string()))?,
        )
    } else {
        drop(tx);
        None
    };

    let fit_handle = match fitter {
        Some(mut fit) => {
            let shared = Arc::clone(&shared);
            let cell = Arc::clone(&cell);
            Some(
                std::thread::Builder::new()
                    .name("reward-fit".into())
                    .spawn(move || -> Result<(RewardPredictor, Vec<PreferenceRecord>)> {
                        let mut records = Vec::new();
                        let result = (|| -> Result<()> {
                            for rec in rx {
                                append_record(&mut db, &rec)?;
                                records.push(rec);
                                fit.since_fit += 1;
                                if fit.due() {
                                    let segments: Vec<Segment> =
                                        shared.queue.lock().expect("queue poisoned").iter().cloned().collect();
                                    fit.fit(&records, segments.iter())?;
                                    cell.publish(fit.model.net.params().to_vec(), fit.model.output_norm);
                                }
                            }
                            Ok(())
                        })();
                        if result.is_err() {
                            shared.abort.store(true, Ordering::SeqCst);
                        }
                        result.map(|()| (fit.model, records))
                    })
                    .map_err(|e| Error::Worker(e.to_string()))?,
            )
        }
        None => None,
    };

    fn join<T>(name: &str, h: std::thread::JoinHandle<Result<T>>) -> Result<T> {
        h.join()
            .map_err(|p| Error::Worker(format!("{name} worker panicked: {}", panic_message(&p))))?
    }
    let rollout_res = join("rollout", rollout_handle);
    let elicit_res = elicit_handle.map(|h| join("elicitation", h)).transpose();
    let fit_res = fit_handle.map(|h| join("reward-fit", h)).transpose();
    let (rollout, metrics_rows) = rollout_res?;
    let elicit = elicit_res?;
    let fit = fit_res?;
    let (ledger, human_records) = elicit.unwrap_or_default();
    let (reward_model, db_records) = match fit {
        Some((m, r)) => (Some(m), r),
        None => (None, Vec::new()),
    };
    Ok(Finished {
        rollout,
        metrics: metrics_rows,
        ledger,
        human_records,
        db: db_records,
        reward_model,
        snapshots: cell.latest_id(),
    })
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

fn write_estimator_report(path: &Path, config: &RunConfig, records: &[PreferenceRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if records.len() >= estimator::MIN_SPLIT_ROWS {
        let data = EstimatorDataset::from_records(records)?;
        let cfg = EstimatorConfig {
            train_fraction: config.split_fraction,
            augment: true,
            svr: SvrConfig {
                c: config.svr_c,
                epsilon: config.svr_epsilon,
                ..SvrConfig::default()
            },
        };
        let scenario = format!("{}_{}", config.env.name(), (config.split_fraction * 100.0).round() as u32);
        let rows = estimator::benchmark(&scenario, &data, &cfg, &[config.seed])?;
        estimator::write_report(&mut w, &rows)?;
    } else {
        estimator::write_report(&mut w, &[])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one experiment and writes its artifacts under `dir`.
///
/// `hub` is required for the `human_ui` labeller, which always runs in async mode.
/// On failure a `FAILED` file with the error text is left next to the partial artifacts.
pub fn run_experiment(config: &RunConfig, dir: &Path, hub: Option<Arc<LabelHub>>) -> Result<RunArtifacts> {
    config.validate()?;
    if config.labeler == Labeler::HumanUi && hub.is_none() {
        return Err(Error::Config("the human_ui labeler needs a running label service".into()));
    }
    fs::create_dir_all(dir.join("checkpoints"))?;
    let _ = fs::remove_file(dir.join(FAILED_MARKER));
    fs::write(dir.join("config.txt"), config.to_file_string())?;
    let mode = if config.labeler == Labeler::HumanUi { Mode::Async } else { config.mode };
    if let Some(hub) = &hub {
        hub.update_status(|s| {
            *s = Default::default();
            s.budget = if config.labeler.uses_preferences() { config.label_budget } else { 0 };
        });
        hub.set_active(true);
    }
    let outcome = catch_unwind(AssertUnwindSafe(|| match mode {
        Mode::Sync => run_sync(config, dir),
        Mode::Async => run_async(config, dir, hub.clone()),
    }));
    if let Some(hub) = &hub {
        hub.set_active(false);
    }
    let result = match outcome {
        Ok(r) => r,
        Err(p) => Err(Error::Worker(format!("run panicked: {}", panic_message(&*p)))),
    }
    .and_then(|f| finish(config, dir, f));
    if let Err(e) = &result {
        log::error!("run failed: {e}");
        let _ = fs::write(dir.join(FAILED_MARKER), format!("{e}\n"));
    }
    result
}

fn finish(config: &RunConfig, dir: &Path, f: Finished) -> Result<RunArtifacts> {
    let params = f.rollout.policy.params.clone();
    save_policy(&dir.join("checkpoints").join("policy_final.ckpt"), config.env, &params)?;
    if let Some(m) = &f.reward_model {
        save_reward_model(&dir.join("checkpoints").join("reward_final.ckpt"), config.env, m)?;
    }
    fs::write(
        dir.join("ledger.json"),
        serde_json::to_string_pretty(&f.ledger).expect("ledger serialises") + "\n",
    )?;
    write_estimator_report(&dir.join("estimator_report.csv"), config, &f.human_records)?;
    let (final_return, final_return_std) = evaluate_greedy(&params, config.env, config.eval_episodes, config.seed)?;
    let summary = RunSummary {
        env: config.env,
        labeler: config.labeler.name().to_string(),
        seed: config.seed,
        steps: f.rollout.steps,
        final_return,
        final_return_std,
        labels: f.ledger.total(),
        human_labels: f.ledger.human_count,
        estimator_labels: f.ledger.estimator_count,
        substitutions: f.ledger.substitutions.len(),
        snapshots_published: f.snapshots,
    };
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serialises") + "\n",
    )?;
    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        summary,
        ledger: f.ledger,
        metrics: f.metrics,
        preferences: f.db,
        policy: params,
        reward_model: f.reward_model,
    })
}
