//! Small continuous-control environments.
//!
//! | name              | state                  | obs                       | act      | horizon |
//! |-------------------|------------------------|---------------------------|----------|---------|
//! | `velocity_runner` | `(x, v)`               | `(v, sin x, cos x)`       | `[-1,1]` | 200     |
//! | `pendulum_swingup`| `(θ, θ̇)`               | `(cos θ, sin θ, θ̇)`       | `[-2,2]` | 200     |
//! | `goal_reacher`    | `(p, v, goal)` in 2-D  | `(p − goal, v)`           | `[-1,1]²`| 300     |
//!
//! `velocity_runner` pays `R(v) = max(0, min(v/10, 1))` on the post-step velocity.
//! Actions outside the bounds are clamped, never rejected.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{RngStream, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    VelocityRunner,
    PendulumSwingup,
    GoalReacher,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [
        EnvKind::VelocityRunner,
        EnvKind::PendulumSwingup,
        EnvKind::GoalReacher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::VelocityRunner => "velocity_runner",
            EnvKind::PendulumSwingup => "pendulum_swingup",
            EnvKind::GoalReacher => "goal_reacher",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "velocity_runner" => Ok(EnvKind::VelocityRunner),
            "pendulum_swingup" => Ok(EnvKind::PendulumSwingup),
            "goal_reacher" => Ok(EnvKind::GoalReacher),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub horizon: usize,
    pub action_bounds: Vec<(f64, f64)>,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        match kind {
            EnvKind::VelocityRunner => Self {
                kind,
                obs_dim: 3,
                act_dim: 1,
                horizon: 200,
                action_bounds: vec![(-1.0, 1.0)],
            },
            EnvKind::PendulumSwingup => Self {
                kind,
                obs_dim: 3,
                act_dim: 1,
                horizon: 200,
                action_bounds: vec![(-2.0, 2.0)],
            },
            EnvKind::GoalReacher => Self {
                kind,
                obs_dim: 4,
                act_dim: 2,
                horizon: 300,
                action_bounds: vec![(-1.0, 1.0), (-1.0, 1.0)],
            },
        }
    }

    pub fn clamp_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(&self.action_bounds)
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }

    /// Largest instantaneous true reward the environment can pay.
    pub fn max_instant_reward(&self) -> f64 {
        match self.kind {
            EnvKind::VelocityRunner | EnvKind::GoalReacher => 1.0,
            EnvKind::PendulumSwingup => 0.0,
        }
    }
}

pub const RUNNER_ACCEL: f64 = 0.2;
pub const RUNNER_DT: f64 = 0.05;
pub const RUNNER_VMAX: f64 = 15.0;
pub const PENDULUM_G_OVER_L: f64 = 10.0;
pub const PENDULUM_DT: f64 = 0.05;
pub const PENDULUM_MAX_SPEED: f64 = 8.0;
pub const REACHER_DAMPING: f64 = 0.95;
pub const REACHER_DT: f64 = 0.05;
pub const REACHER_RADIUS: f64 = 0.1;

/// The velocity reward `max(0, min(v/10, 1))`.
pub fn runner_reward(velocity: f64) -> f64 {
    (velocity / 10.0).min(1.0).max(0.0)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub spec: EnvSpec,
    /// Environment-specific physical state, see the module table.
    pub physical: Vec<f64>,
    pub step_index: usize,
    pub rng: RngStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub true_reward: f64,
    pub done: bool,
}

/// Starts an episode. The environment stream draws, in order: the initial position
/// component(s), then (for `goal_reacher`) the goal's x and y.
pub fn reset(spec: &EnvSpec, seed: u64) -> (EnvState, Vec<f64>) {
    let mut rng = RngStream::new(seed, StreamId::Environment);
    let physical = match spec.kind {
        EnvKind::VelocityRunner => vec![rng.uniform_range(-0.1, 0.1), 0.0],
        EnvKind::PendulumSwingup => vec![
            PI + rng.uniform_range(-0.1, 0.1),
            rng.uniform_range(-0.1, 0.1),
        ],
        EnvKind::GoalReacher => {
            let px = rng.uniform_range(-0.1, 0.1);
            let py = rng.uniform_range(-0.1, 0.1);
            let gx = rng.uniform_range(-1.0, 1.0);
            let gy = rng.uniform_range(-1.0, 1.0);
            vec![px, py, 0.0, 0.0, gx, gy]
        }
    };
    let state = EnvState {
        spec: spec.clone(),
        physical,
        step_index: 0,
        rng,
    };
    let obs = state.observation();
    (state, obs)
}

impl EnvState {
    pub fn is_done(&self) -> bool {
        self.step_index >= self.spec.horizon
    }

    pub fn observation(&self) -> Vec<f64> {
        let s = &self.physical;
        match self.spec.kind {
            EnvKind::VelocityRunner => vec![s[1], s[0].sin(), s[0].cos()],
            EnvKind::PendulumSwingup => vec![s[0].cos(), s[0].sin(), s[1]],
            EnvKind::GoalReacher => vec![s[0] - s[4], s[1] - s[5], s[2], s[3]],
        }
    }

    /// Advances one step. Pure: `self` is left untouched.
    pub fn step(&self, action: &[f64]) -> Result<(EnvState, StepResult)> {
        if self.is_done() {
            return Err(Error::Env(format!(
                "step called on finished episode (step {} of {})",
                self.step_index, self.spec.horizon
            )));
        }
        if action.len() != self.spec.act_dim {
            return Err(Error::Dimension {
                expected: self.spec.act_dim,
                got: action.len(),
            });
        }
        let a = self.spec.clamp_action(action);
        let s = &self.physical;
        let (physical, reward) = match self.spec.kind {
            EnvKind::VelocityRunner => {
                let v = (s[1] + RUNNER_ACCEL * a[0]).clamp(-RUNNER_VMAX, RUNNER_VMAX);
                let x = s[0] + RUNNER_DT * v;
                (vec![x, v], runner_reward(v))
            }
            EnvKind::PendulumSwingup => {
                // semi-implicit Euler
                let accel = -PENDULUM_G_OVER_L * (s[0] - PI).sin() + 3.0 * a[0];
                let omega = (s[1] + PENDULUM_DT * accel).clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
                let theta = s[0] + PENDULUM_DT * omega;
                let w = wrap_angle(theta);
                let reward = -(w * w + 0.1 * omega * omega + 0.001 * a[0] * a[0]);
                (vec![theta, omega], reward)
            }
            EnvKind::GoalReacher => {
                let vx = REACHER_DAMPING * s[2] + REACHER_DT * a[0];
                let vy = REACHER_DAMPING * s[3] + REACHER_DT * a[1];
                let px = s[0] + REACHER_DT * vx;
                let py = s[1] + REACHER_DT * vy;
                let dist = ((px - s[4]).powi(2) + (py - s[5]).powi(2)).sqrt();
                let reward = if dist < REACHER_RADIUS { 1.0 } else { 0.0 };
                (vec![px, py, vx, vy, s[4], s[5]], reward)
            }
        };
        let next = EnvState {
            spec: self.spec.clone(),
            physical,
            step_index: self.step_index + 1,
            rng: self.rng.clone(),
        };
        let result = StepResult {
            observation: next.observation(),
            true_reward: reward,
            done: next.is_done(),
        };
        Ok((next, result))
    }
}

/// True reward of taking `action` from an observation, when the observation determines
/// it. Only `velocity_runner` qualifies (its reward depends on velocity alone).
pub fn true_reward_from_observation(kind: EnvKind, observation: &[f64], action: &[f64]) -> Option<f64> {
    match kind {
        EnvKind::VelocityRunner => {
            let a = action[0].clamp(-1.0, 1.0);
            let v = (observation[0] + RUNNER_ACCEL * a).clamp(-RUNNER_VMAX, RUNNER_VMAX);
            Some(runner_reward(v))
        }
        _ => None,
    }
}

/// Return of the best open-loop policy for `velocity_runner` (full throttle from rest).
pub fn velocity_runner_max_return() -> f64 {
    let spec = EnvSpec::new(EnvKind::VelocityRunner);
    let (mut state, _) = reset(&spec, 0);
    let mut total = 0.0;
    while !state.is_done() {
        let (next, r) = state.step(&[1.0]).expect("in bounds");
        total += r.true_reward;
        state = next;
    }
    total
}

/// 2-D drawable point for one observation, used for trace playback.
pub fn trace_frame(kind: EnvKind, observation: &[f64]) -> [f64; 2] {
    match kind {
        // position on a circular track
        EnvKind::VelocityRunner => [observation[2], observation[1]],
        // pendulum tip, up is +y
        EnvKind::PendulumSwingup => [observation[1], observation[0]],
        // offset from the goal
        EnvKind::GoalReacher => [observation[0], observation[1]],
    }
}
