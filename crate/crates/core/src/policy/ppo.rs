use crate::error::Result;
use crate::numerics::RngStream;
use crate::policy::{ForwardCache, Policy, PolicyParams, RolloutBuffer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub horizon: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub step_size: f64,
    /// Per-network gradient-norm cap (actor with log-std, critic).
    pub max_grad_norm: Option<f64>,
    /// Stop the remaining epochs once `|mean log ratio|` exceeds this.
    pub kl_stop: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            horizon: 2048,
            minibatch: 64,
            epochs: 10,
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            step_size: 3e-4,
            max_grad_norm: Some(0.5),
            kl_stop: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoSample {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub value_target: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    pub epochs_run: usize,
    pub kl_early_stop: bool,
    /// Mean `old_log_prob − new_log_prob` over the last epoch.
    pub approx_kl: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

/// `min(ρ·A, clip(ρ, 1−ε, 1+ε)·A)` and its derivative with respect to `ρ`.
/// When both branches agree the unclipped derivative `A` is used.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

/// Per-batch loss terms.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct LossParts {
    pub total: f64,
    pub surrogate: f64,
    pub value: f64,
    pub clipped: usize,
    pub log_ratio: f64,
}

/// `mean(−surrogate + c_v·(V − R)²) − c_e·entropy` and its gradient in the flat
/// `[actor, log_std, critic]` layout.
pub fn ppo_loss_and_grad(params: &PolicyParams, batch: &[PpoSample], config: &PpoConfig) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.num_params()];
    let parts = loss_into(params, batch, config, &mut grad, &mut ForwardCache::new());
    Ok((parts.total, grad))
}

pub(crate) fn loss_into(
    params: &PolicyParams,
    batch: &[PpoSample],
    config: &PpoConfig,
    grad: &mut [f64],
    cache: &mut ForwardCache,
) -> LossParts {
    let n = batch.len() as f64;
    let na = params.actor.num_params();
    let ns = params.log_std.len();
    let (g_actor, rest) = grad.split_at_mut(na);
    let (g_log_std, g_critic) = rest.split_at_mut(ns);
    let sigmas: Vec<f64> = params.log_std.iter().map(|l| l.exp()).collect();
    let mut upstream = vec![0.0; ns];
    let mut parts = LossParts::default();
    for s in batch {
        let mean = params.actor.forward_with(&s.observation, &mut cache.actor).to_vec();
        let logp = params.log_prob(&mean, &s.action);
        let log_ratio = logp - s.old_log_prob;
        let ratio = log_ratio.exp();
        let (surr, d_ratio) = clipped_surrogate(ratio, s.advantage, config.clip_eps);
        if d_ratio == 0.0 && s.advantage != 0.0 {
            parts.clipped += 1;
        }
        parts.surrogate += surr / n;
        parts.log_ratio += log_ratio / n;
        // d(−surr/n)/d logp = −dρ·ρ/n
        let d_logp = -d_ratio * ratio / n;
        if d_logp != 0.0 {
            for d in 0..ns {
                let z = (s.action[d] - mean[d]) / sigmas[d];
                upstream[d] = d_logp * z / sigmas[d];
                g_log_std[d] += d_logp * (z * z - 1.0);
            }
            params.actor.backward_with(&s.observation, &mut cache.actor, &upstream, g_actor, None);
        }
        let v = params.critic.forward_with(&s.observation, &mut cache.critic)[0];
        let err = v - s.value_target;
        parts.value += err * err / n;
        let d_v = [2.0 * config.value_coef * err / n];
        params.critic.backward_with(&s.observation, &mut cache.critic, &d_v, g_critic, None);
    }
    for g in g_log_std.iter_mut() {
        *g -= config.entropy_coef;
    }
    parts.total = -parts.surrogate + config.value_coef * parts.value - config.entropy_coef * params.entropy();
    parts
}

fn clip_norm(g: &mut [f64], max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > max {
            let scale = max / norm;
            g.iter_mut().for_each(|x| *x *= scale);
        }
    }
}

impl Policy {
    /// Several epochs of minibatch Adam steps on the clipped objective.
    pub fn ppo_update(&mut self, buffer: &RolloutBuffer, rng: &mut RngStream) -> UpdateStats {
        let samples = buffer.samples(self.config.gamma, self.config.lambda);
        self.update_on_samples(&samples, rng)
    }

    pub fn update_on_samples(&mut self, samples: &[PpoSample], rng: &mut RngStream) -> UpdateStats {
        let cfg = self.config;
        let mut stats = UpdateStats::default();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut grad = vec![0.0; self.params.num_params()];
        let mut cache = ForwardCache::new();
        let na = self.params.actor.num_params();
        let ns = self.params.log_std.len();
        let mut batch = Vec::with_capacity(cfg.minibatch);
        'epochs: for _ in 0..cfg.epochs {
            rng.shuffle(&mut order);
            let mut epoch_log_ratio = 0.0;
            let mut epoch_clipped = 0usize;
            let (mut pl, mut vl, mut batches) = (0.0, 0.0, 0usize);
            stats.epochs_run += 1;
            for chunk in order.chunks(cfg.minibatch) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| samples[i].clone()));
                grad.iter_mut().for_each(|g| *g = 0.0);
                let parts = loss_into(&self.params, &batch, &cfg, &mut grad, &mut cache);
                epoch_log_ratio += parts.log_ratio * chunk.len() as f64;
                epoch_clipped += parts.clipped;
                pl += -parts.surrogate;
                vl += parts.value;
                batches += 1;
                if parts.log_ratio.abs() > cfg.kl_stop {
                    stats.kl_early_stop = true;
                    log::warn!("ppo: |mean log ratio| {} exceeds {}; stopping update", parts.log_ratio.abs(), cfg.kl_stop);
                    stats.approx_kl = -parts.log_ratio;
                    break 'epochs;
                }
                let (g_pol, g_critic) = grad.split_at_mut(na + ns);
                clip_norm(g_pol, cfg.max_grad_norm);
                clip_norm(g_critic, cfg.max_grad_norm);
                let (g_actor, g_log_std) = g_pol.split_at(na);
                self.actor_opt.step(self.params.actor.params_mut(), g_actor);
                self.log_std_opt.step(&mut self.params.log_std, g_log_std);
                self.critic_opt.step(self.params.critic.params_mut(), g_critic);
            }
            let n = samples.len().max(1) as f64;
            stats.approx_kl = -epoch_log_ratio / n;
            stats.clip_fraction = epoch_clipped as f64 / n;
            stats.policy_loss = pl / batches.max(1) as f64;
            stats.value_loss = vl / batches.max(1) as f64;
        }
        stats.entropy = self.params.entropy();
        stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gradient_check, GradCheckConfig, StreamId};
    use crate::policy::ActOutput;

    #[test]
    fn surrogate_at_unit_ratio_is_advantage() {
        for a in [-2.0, 0.0, 0.7] {
            assert_eq!(clipped_surrogate(1.0, a, 0.2), (a, a));
        }
    }

    #[test]
    fn clipped_branch_has_zero_slope() {
        assert_eq!(clipped_surrogate(1.5, 2.0, 0.2), (1.2 * 2.0, 0.0));
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), (-0.8, 0.0));
        // pessimistic side stays unclipped
        assert_eq!(clipped_surrogate(0.5, 2.0, 0.2), (1.0, 2.0));
        assert_eq!(clipped_surrogate(1.5, -1.0, 0.2), (-1.5, -1.0));
    }

    #[test]
    fn unchanged_policy_objective_is_mean_advantage() {
        let mut rng = RngStream::new(3, StreamId::Init);
        let policy = Policy::new(3, 2, PpoConfig::default(), &mut rng);
        let mut buf = RolloutBuffer::default();
        for _ in 0..32 {
            let o: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let out = policy.act(&o, &mut rng).unwrap();
            buf.push(o, &out, rng.normal(), false);
        }
        let samples = buf.samples(0.99, 0.95);
        let cfg = PpoConfig { value_coef: 0.0, entropy_coef: 0.0, ..Default::default() };
        let parts = loss_into(&policy.params, &samples, &cfg, &mut vec![0.0; policy.params.num_params()], &mut ForwardCache::new());
        let mean_adv = samples.iter().map(|s| s.advantage).sum::<f64>() / samples.len() as f64;
        assert!((parts.surrogate - mean_adv).abs() < 1e-12);
        assert_eq!(parts.clipped, 0);
    }

    #[test]
    fn zero_variance_limit_acts_greedily() {
        let mut rng = RngStream::new(4, StreamId::Init);
        let mut policy = Policy::new(3, 1, PpoConfig::default(), &mut rng);
        policy.params.log_std = vec![-10.0];
        let o = [0.2, -0.4, 1.0];
        let out = policy.act(&o, &mut rng).unwrap();
        assert!((out.action[0] - out.mean[0]).abs() < 1e-3);
        let mut r1 = RngStream::new(9, StreamId::Policy);
        let mut r2 = RngStream::new(9, StreamId::Policy);
        assert_eq!(policy.act(&o, &mut r1).unwrap(), policy.act(&o, &mut r2).unwrap());
    }

    #[test]
    fn standard_normal_sampling_moments() {
        let mut rng = RngStream::new(5, StreamId::Init);
        let mut policy = Policy::new(1, 1, PpoConfig::default(), &mut rng);
        policy.params.actor = crate::numerics::Mlp::zeros(&[1, 64, 64, 1], crate::numerics::Activation::Tanh, crate::numerics::Activation::Identity);
        let n = 10_000;
        let mean = (0..n).map(|_| policy.act(&[0.0], &mut rng).unwrap().action[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / 100.0, "{mean}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(6, StreamId::Init);
        let cfg = PpoConfig::default();
        let policy = Policy::new(3, 2, cfg, &mut rng);
        let mut old = policy.params.clone();
        for p in old.actor.params_mut() {
            *p += 0.05 * rng.normal();
        }
        let batch: Vec<PpoSample> = (0..16)
            .map(|_| {
                let o: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
                let mean = old.mean_action(&o).unwrap();
                let a: Vec<f64> = mean.iter().map(|m| m + rng.normal()).collect();
                PpoSample {
                    old_log_prob: old.log_prob(&mean, &a),
                    observation: o,
                    action: a,
                    advantage: rng.normal(),
                    value_target: rng.normal(),
                }
            })
            .collect();
        let (_, grad) = ppo_loss_and_grad(&policy.params, &batch, &cfg).unwrap();
        let flat = policy.params.flatten();
        let report = gradient_check(
            &flat,
            &grad,
            |p| {
                let mut q = policy.params.clone();
                q.load_flat(p);
                ppo_loss_and_grad(&q, &batch, &cfg).unwrap().0
            },
            GradCheckConfig { max_coords: 300, ..Default::default() },
        );
        assert!(report.pass, "{report:?}");
    }

    /// One-state continuous bandit: reward 1 for a positive action ("A"), else 0.
    #[test]
    fn bandit_preference_for_rewarded_action_grows() {
        let mut rng = RngStream::new(7, StreamId::Init);
        let cfg = PpoConfig { horizon: 256, minibatch: 64, epochs: 4, gamma: 0.0, lambda: 0.0, ..Default::default() };
        let mut policy = Policy::new(1, 1, cfg, &mut rng);
        let prob_a = |p: &Policy| {
            let m = p.params.mean_action(&[1.0]).unwrap()[0];
            let s = p.params.log_std[0].exp();
            0.5 * (1.0 + erf(m / (s * std::f64::consts::SQRT_2)))
        };
        let mut last = prob_a(&policy);
        let first = last;
        for _ in 0..50 {
            let mut buf = RolloutBuffer::default();
            for _ in 0..cfg.horizon {
                let out: ActOutput = policy.act(&[1.0], &mut rng).unwrap();
                let r = if out.action[0] > 0.0 { 1.0 } else { 0.0 };
                buf.push(vec![1.0], &out, r, true);
            }
            policy.ppo_update(&buf, &mut rng);
            let p = prob_a(&policy);
            // sampling noise near saturation is allowed a hair of slack
            assert!(p >= last - 1e-3, "P(A) fell from {last} to {p}");
            last = p;
        }
        assert!(last > first + 0.2, "{first} -> {last}");
    }

    fn erf(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26
        let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
        let y = 1.0 - (((((1.061_405_429 * t - 1.453_152_027) * t) + 1.421_413_741) * t - 0.284_496_736) * t + 0.254_829_592) * t * (-x * x).exp();
        if x >= 0.0 { y } else { -y }
    }

    #[test]
    fn kl_blowup_stops_early() {
        let mut rng = RngStream::new(8, StreamId::Init);
        let mut policy = Policy::new(1, 1, PpoConfig::default(), &mut rng);
        let samples: Vec<PpoSample> = (0..128)
            .map(|_| PpoSample { observation: vec![0.0], action: vec![0.0], old_log_prob: 5.0, advantage: 1.0, value_target: 0.0 })
            .collect();
        let stats = policy.update_on_samples(&samples, &mut rng);
        assert!(stats.kl_early_stop);
        assert_eq!(stats.epochs_run, 1);
    }
}
