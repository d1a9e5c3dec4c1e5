//! Run configuration and its flat `key = value` file form.

use std::fmt;
use std::str::FromStr;

use crate::envlib::EnvKind;
use crate::error::{Error, Result};
use crate::policy::PpoConfig;

/// Where preference labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Labeler {
    /// PPO on the environment reward; no preferences at all.
    TrueRewardBaseline,
    /// Hard labels `{0, 0.5, 1}` from true returns.
    OracleHard,
    /// Scaled labels from true returns.
    OracleScaled,
    /// A person answering through the label service.
    HumanUi,
}

impl Labeler {
    pub const ALL: [Labeler; 4] = [
        Labeler::TrueRewardBaseline,
        Labeler::OracleHard,
        Labeler::OracleScaled,
        Labeler::HumanUi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Labeler::TrueRewardBaseline => "true_reward_baseline",
            Labeler::OracleHard => "oracle_hard",
            Labeler::OracleScaled => "oracle_scaled",
            Labeler::HumanUi => "human_ui",
        }
    }

    pub fn uses_preferences(self) -> bool {
        self != Labeler::TrueRewardBaseline
    }
}

impl fmt::Display for Labeler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Labeler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        Labeler::ALL
            .into_iter()
            .find(|l| l.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown labeler '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One thread, fixed order; bit-reproducible.
    Sync,
    /// Rollout, elicitation and reward fitting on separate threads.
    Async,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Sync => "sync",
            Mode::Async => "async",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sync" => Ok(Mode::Sync),
            "async" => Ok(Mode::Async),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

pub const DEFAULT_BUDGET: usize = 200;
/// Budgets of the long-run presets.
pub const PAPER_BUDGETS: [usize; 2] = [1400, 700];
pub const MAX_DEMO_FRACTION: f64 = 0.5;
/// Label-to-step ratio allowed when `faithful_budget` is set.
pub const FAITHFUL_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub total_steps: u64,
    pub label_budget: usize,
    pub labeler: Labeler,
    /// Fraction ρ of the budget answered by the estimator.
    pub demo_fraction: f64,
    pub split_fraction: f64,
    pub seed: u64,
    pub mode: Mode,
    pub faithful_budget: bool,
    /// Share of total steps before the first query.
    pub warmup_fraction: f64,
    /// Share of the human part of the budget collected before the estimator may answer.
    pub init_share: f64,
    pub mse_gate: f64,
    /// Refit the estimator after this many new human labels.
    pub estimator_refit: usize,
    /// Refit the reward model after this many new labels.
    pub fit_interval: usize,
    pub reward_epochs: usize,
    pub reward_minibatch: usize,
    pub reward_step_size: f64,
    pub segment_length: usize,
    pub segment_stride: usize,
    pub queue_capacity: usize,
    /// 0 keeps every reward set in the scaling context.
    pub context_window: usize,
    pub ppo: PpoConfig,
    pub eval_episodes: usize,
    pub svr_c: f64,
    pub svr_epsilon: f64,
    pub query_timeout_secs: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::VelocityRunner,
            total_steps: 100_000,
            label_budget: DEFAULT_BUDGET,
            labeler: Labeler::OracleScaled,
            demo_fraction: 0.0,
            split_fraction: 0.7,
            seed: 0,
            mode: Mode::Sync,
            faithful_budget: false,
            warmup_fraction: 0.05,
            init_share: 0.4,
            mse_gate: 0.1,
            estimator_refit: 50,
            fit_interval: 1,
            reward_epochs: 10,
            reward_minibatch: 64,
            reward_step_size: 1e-4,
            segment_length: crate::trajectory::SEGMENT_LENGTH,
            segment_stride: crate::trajectory::SEGMENT_LENGTH,
            queue_capacity: crate::trajectory::QUEUE_CAPACITY,
            context_window: 0,
            ppo: PpoConfig::default(),
            eval_episodes: 5,
            svr_c: 1.0,
            svr_epsilon: 0.01,
            query_timeout_secs: 600,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for {key}"))),
    }
}

impl RunConfig {
    /// Every recognised key, in file order.
    pub const KEYS: [&'static str; 38] = [
        "env",
        "total_steps",
        "label_budget",
        "labeler",
        "demo_fraction",
        "split_fraction",
        "seed",
        "mode",
        "faithful_budget",
        "warmup_fraction",
        "init_share",
        "mse_gate",
        "estimator_refit",
        "fit_interval",
        "reward_epochs",
        "reward_minibatch",
        "reward_step_size",
        "segment_length",
        "segment_stride",
        "queue_capacity",
        "context_window",
        "ppo_horizon",
        "ppo_minibatch",
        "ppo_epochs",
        "ppo_gamma",
        "ppo_lambda",
        "ppo_clip_eps",
        "ppo_value_coef",
        "ppo_entropy_coef",
        "ppo_step_size",
        "ppo_max_grad_norm",
        "ppo_kl_stop",
        "eval_episodes",
        "svr_c",
        "svr_epsilon",
        "query_timeout_secs",
        // accepted for completeness; both map onto `mode`
        "sync",
        "async",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "env" => self.env = v.parse()?,
            "total_steps" => self.total_steps = parse_num(key, v)?,
            "label_budget" => self.label_budget = parse_num(key, v)?,
            "labeler" => self.labeler = v.parse()?,
            "demo_fraction" => self.demo_fraction = parse_num(key, v)?,
            "split_fraction" => self.split_fraction = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "mode" => self.mode = v.parse()?,
            "sync" => {
                if parse_bool(key, v)? {
                    self.mode = Mode::Sync
                }
            }
            "async" => {
                if parse_bool(key, v)? {
                    self.mode = Mode::Async
                }
            }
            "faithful_budget" => self.faithful_budget = parse_bool(key, v)?,
            "warmup_fraction" => self.warmup_fraction = parse_num(key, v)?,
            "init_share" => self.init_share = parse_num(key, v)?,
            "mse_gate" => self.mse_gate = parse_num(key, v)?,
            "estimator_refit" => self.estimator_refit = parse_num(key, v)?,
            "fit_interval" => self.fit_interval = parse_num(key, v)?,
            "reward_epochs" => self.reward_epochs = parse_num(key, v)?,
            "reward_minibatch" => self.reward_minibatch = parse_num(key, v)?,
            "reward_step_size" => self.reward_step_size = parse_num(key, v)?,
            "segment_length" => self.segment_length = parse_num(key, v)?,
            "segment_stride" => self.segment_stride = parse_num(key, v)?,
            "queue_capacity" => self.queue_capacity = parse_num(key, v)?,
            "context_window" => self.context_window = parse_num(key, v)?,
            "ppo_horizon" => self.ppo.horizon = parse_num(key, v)?,
            "ppo_minibatch" => self.ppo.minibatch = parse_num(key, v)?,
            "ppo_epochs" => self.ppo.epochs = parse_num(key, v)?,
            "ppo_gamma" => self.ppo.gamma = parse_num(key, v)?,
            "ppo_lambda" => self.ppo.lambda = parse_num(key, v)?,
            "ppo_clip_eps" => self.ppo.clip_eps = parse_num(key, v)?,
            "ppo_value_coef" => self.ppo.value_coef = parse_num(key, v)?,
            "ppo_entropy_coef" => self.ppo.entropy_coef = parse_num(key, v)?,
            "ppo_step_size" => self.ppo.step_size = parse_num(key, v)?,
            "ppo_max_grad_norm" => {
                self.ppo.max_grad_norm = match v {
                    "none" => None,
                    _ => Some(parse_num(key, v)?),
                }
            }
            "ppo_kl_stop" => self.ppo.kl_stop = parse_num(key, v)?,
            "eval_episodes" => self.eval_episodes = parse_num(key, v)?,
            "svr_c" => self.svr_c = parse_num(key, v)?,
            "svr_epsilon" => self.svr_epsilon = parse_num(key, v)?,
            "query_timeout_secs" => self.query_timeout_secs = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Key/value pairs in canonical order (the `sync`/`async` aliases are omitted).
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.ppo;
        vec![
            ("env", self.env.name().to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("label_budget", self.label_budget.to_string()),
            ("labeler", self.labeler.name().to_string()),
            ("demo_fraction", self.demo_fraction.to_string()),
            ("split_fraction", self.split_fraction.to_string()),
            ("seed", self.seed.to_string()),
            ("mode", self.mode.name().to_string()),
            ("faithful_budget", self.faithful_budget.to_string()),
            ("warmup_fraction", self.warmup_fraction.to_string()),
            ("init_share", self.init_share.to_string()),
            ("mse_gate", self.mse_gate.to_string()),
            ("estimator_refit", self.estimator_refit.to_string()),
            ("fit_interval", self.fit_interval.to_string()),
            ("reward_epochs", self.reward_epochs.to_string()),
            ("reward_minibatch", self.reward_minibatch.to_string()),
            ("reward_step_size", self.reward_step_size.to_string()),
            ("segment_length", self.segment_length.to_string()),
            ("segment_stride", self.segment_stride.to_string()),
            ("queue_capacity", self.queue_capacity.to_string()),
            ("context_window", self.context_window.to_string()),
            ("ppo_horizon", p.horizon.to_string()),
            ("ppo_minibatch", p.minibatch.to_string()),
            ("ppo_epochs", p.epochs.to_string()),
            ("ppo_gamma", p.gamma.to_string()),
            ("ppo_lambda", p.lambda.to_string()),
            ("ppo_clip_eps", p.clip_eps.to_string()),
            ("ppo_value_coef", p.value_coef.to_string()),
            ("ppo_entropy_coef", p.entropy_coef.to_string()),
            ("ppo_step_size", p.step_size.to_string()),
            (
                "ppo_max_grad_norm",
                p.max_grad_norm.map_or("none".to_string(), |v| v.to_string()),
            ),
            ("ppo_kl_stop", p.kl_stop.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("svr_c", self.svr_c.to_string()),
            ("svr_epsilon", self.svr_epsilon.to_string()),
            ("query_timeout_secs", self.query_timeout_secs.to_string()),
        ]
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::from("# prefscale run configuration\n");
        for (k, v) in self.entries() {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Parses `key = value` lines onto `self`; `#` starts a comment. Returns the keys set.
    pub fn apply_file_str(&mut self, text: &str) -> Result<Vec<String>> {
        let mut keys = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected 'key = value', got '{line}'")))?;
            self.set(k, v).map_err(|e| Error::parse(i + 1, e.to_string()))?;
            keys.push(k.trim().to_string());
        }
        Ok(keys)
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_file_str(text)?;
        Ok(c)
    }

    /// Number of labels the estimator answers: `round(ρ · budget)`.
    pub fn estimator_labels(&self) -> usize {
        (self.demo_fraction * self.label_budget as f64).round() as usize
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_fraction * self.total_steps as f64).floor() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_DEMO_FRACTION).contains(&self.demo_fraction) {
            return Err(Error::Config(format!(
                "demo_fraction {} outside the supported range 0-0.5",
                self.demo_fraction
            )));
        }
        if self.demo_fraction > 0.0 && !self.labeler.uses_preferences() {
            return Err(Error::Config("demo_fraction needs a preference labeler".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!("split_fraction {} must lie in (0, 1)", self.split_fraction)));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!("warmup_fraction {} must lie in [0, 1)", self.warmup_fraction)));
        }
        if !(0.0..=1.0).contains(&self.init_share) {
            return Err(Error::Config(format!("init_share {} must lie in [0, 1]", self.init_share)));
        }
        if self.segment_length == 0 || self.segment_stride == 0 {
            return Err(Error::Config("segment length and stride must be positive".into()));
        }
        if self.queue_capacity < 2 {
            return Err(Error::Config("queue_capacity must be at least 2".into()));
        }
        if self.ppo.horizon == 0 || self.ppo.minibatch == 0 || self.ppo.epochs == 0 {
            return Err(Error::Config("ppo horizon, minibatch and epochs must be positive".into()));
        }
        if self.fit_interval == 0 || self.reward_minibatch == 0 || self.estimator_refit == 0 {
            return Err(Error::Config("fit_interval, reward_minibatch and estimator_refit must be positive".into()));
        }
        if self.labeler.uses_preferences() {
            if self.label_budget == 0 {
                return Err(Error::Config("label_budget must be at least 1".into()));
            }
            if self.faithful_budget && self.label_budget as f64 > FAITHFUL_RATIO * self.total_steps as f64 {
                return Err(Error::Config(format!(
                    "faithful_budget: {} labels for {} steps exceeds the 1e-4 ratio",
                    self.label_budget, self.total_steps
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let mut c = RunConfig::default();
        c.env = EnvKind::GoalReacher;
        c.demo_fraction = 0.3;
        c.ppo.max_grad_norm = None;
        c.ppo.gamma = 0.987_654_321;
        let back = RunConfig::from_file_str(&c.to_file_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = RunConfig::from_file_str("seed = 3\n\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = RunConfig::from_file_str("seed 3").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn labeler_names() {
        for l in Labeler::ALL {
            assert_eq!(l.name().parse::<Labeler>().unwrap(), l);
            assert_eq!(l.name().replace('_', "-").parse::<Labeler>().unwrap(), l);
        }
    }

    #[test]
    fn validation_rules() {
        let mut c = RunConfig::default();
        c.validate().unwrap();
        c.demo_fraction = 0.6;
        assert!(c.validate().unwrap_err().to_string().contains("0-0.5"));
        c.demo_fraction = 0.5;
        c.validate().unwrap();
        c.faithful_budget = true;
        assert!(c.validate().is_err());
        c.label_budget = 10;
        c.validate().unwrap();
    }

    #[test]
    fn estimator_share_arithmetic() {
        let mut c = RunConfig::default();
        c.label_budget = 1400;
        c.demo_fraction = 0.3;
        assert_eq!(c.estimator_labels(), 420);
        c.label_budget = 700;
        c.demo_fraction = 0.5;
        assert_eq!(c.estimator_labels(), 350);
    }
}
