//! Gaussian actor-critic trained with the clipped surrogate objective.

mod gae;
mod ppo;

pub use gae::{gae_advantages, normalize_advantages};
pub use ppo::{clipped_surrogate, ppo_loss_and_grad, PpoConfig, PpoSample, UpdateStats};

use crate::error::{Error, Result};
use crate::numerics::{default_sizes, Activation, AdamState, Mlp, RngStream, Workspace};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    /// Observation → per-dimension action mean.
    pub actor: Mlp,
    pub log_std: Vec<f64>,
    /// Observation → state value.
    pub critic: Mlp,
}

impl PolicyParams {
    pub fn new(obs_dim: usize, act_dim: usize, rng: &mut RngStream) -> Self {
        let actor = Mlp::glorot(&default_sizes(obs_dim, act_dim), Activation::Tanh, Activation::Identity, rng);
        let critic = Mlp::glorot(&default_sizes(obs_dim, 1), Activation::Tanh, Activation::Identity, rng);
        Self {
            actor,
            log_std: vec![0.0; act_dim],
            critic,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// Number of entries in the flat `[actor, log_std, critic]` layout.
    pub fn num_params(&self) -> usize {
        self.actor.num_params() + self.log_std.len() + self.critic.num_params()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.actor.params());
        v.extend_from_slice(&self.log_std);
        v.extend_from_slice(self.critic.params());
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let (a, rest) = flat.split_at(self.actor.num_params());
        let (s, c) = rest.split_at(self.log_std.len());
        self.actor.params_mut().copy_from_slice(a);
        self.log_std.copy_from_slice(s);
        self.critic.params_mut().copy_from_slice(c);
    }

    /// Log-density of `action` under `N(mean, exp(log_std)²)`.
    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        mean.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((m, a), ls)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - 0.5 * LN_2PI
            })
            .sum()
    }

    /// Differential entropy of the action distribution.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 * (LN_2PI + 1.0)).sum()
    }

    pub fn value(&self, observation: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(observation)?[0])
    }

    pub fn mean_action(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward(observation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    /// Sampled action before any clamping to environment bounds.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub mean: Vec<f64>,
}

/// Policy parameters plus optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub params: PolicyParams,
    pub config: PpoConfig,
    actor_opt: AdamState,
    log_std_opt: AdamState,
    critic_opt: AdamState,
}

impl Policy {
    pub fn new(obs_dim: usize, act_dim: usize, config: PpoConfig, rng: &mut RngStream) -> Self {
        Self::from_params(PolicyParams::new(obs_dim, act_dim, rng), config)
    }

    pub fn from_params(params: PolicyParams, config: PpoConfig) -> Self {
        let lr = config.step_size;
        Self {
            actor_opt: AdamState::new(params.actor.num_params(), lr),
            log_std_opt: AdamState::new(params.log_std.len(), lr),
            critic_opt: AdamState::new(params.critic.num_params(), lr),
            params,
            config,
        }
    }

    /// Samples `a ~ N(μ(o), σ²)`; the log-probability refers to the unclamped sample.
    pub fn act(&self, observation: &[f64], rng: &mut RngStream) -> Result<ActOutput> {
        if observation.len() != self.params.obs_dim() {
            return Err(Error::Dimension {
                expected: self.params.obs_dim(),
                got: observation.len(),
            });
        }
        let mean = self.params.actor.forward(observation)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.params.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.normal())
            .collect();
        let log_prob = self.params.log_prob(&mean, &action);
        let value = self.params.value(observation)?;
        Ok(ActOutput {
            action,
            log_prob,
            value,
            mean,
        })
    }

    pub fn greedy_action(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.params.mean_action(observation)
    }
}

/// Fixed-horizon on-policy experience.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// True or predicted reward, depending on the run's reward channel.
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value of the state following the final step (ignored if that step ended an episode).
    pub bootstrap_value: f64,
}

impl RolloutBuffer {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            observations: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            bootstrap_value: 0.0,
        }
    }

    pub fn push(&mut self, observation: Vec<f64>, out: &ActOutput, reward: f64, done: bool) {
        self.observations.push(observation);
        self.actions.push(out.action.clone());
        self.rewards.push(reward);
        self.values.push(out.value);
        self.log_probs.push(out.log_prob);
        self.dones.push(done);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn clear(&mut self) {
        *self = RolloutBuffer::with_capacity(self.observations.capacity());
    }

    /// Advantages (normalised) and value targets, as samples ready for the update.
    pub fn samples(&self, gamma: f64, lambda: f64) -> Vec<PpoSample> {
        let mut values = self.values.clone();
        values.push(self.bootstrap_value);
        let (mut adv, returns) = gae_advantages(&self.rewards, &values, &self.dones, gamma, lambda);
        normalize_advantages(&mut adv);
        (0..self.len())
            .map(|t| PpoSample {
                observation: self.observations[t].clone(),
                action: self.actions[t].clone(),
                old_log_prob: self.log_probs[t],
                advantage: adv[t],
                value_target: returns[t],
            })
            .collect()
    }
}

pub(crate) struct ForwardCache {
    pub actor: Workspace,
    pub critic: Workspace,
}

impl ForwardCache {
    pub fn new() -> Self {
        Self {
            actor: Workspace::default(),
            critic: Workspace::default(),
        }
    }
}
