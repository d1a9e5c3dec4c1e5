//! Latent reward predictor `r̂(o, a)` fitted to pairwise preference labels.
//!
//! A pair's predicted preference is the softmax of the two segments' summed
//! predictions, and fitting minimises the soft-label cross-entropy
//! `−[ẑ·log P̂(σ¹≻σ²) + (1−ẑ)·log P̂(σ²≻σ¹)]` averaged over the database.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{default_sizes, Activation, AdamState, Mlp, RngStream, Workspace};
use crate::oracle::PreferenceRecord;
use crate::trajectory::Segment;

/// Predictions observed before normalisation statistics are trusted.
pub const NORM_WARMUP: u64 = 100;
pub const DEFAULT_L2: f64 = 1e-4;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `P̂[σ¹ ≻ σ²] = e^{s₁} / (e^{s₁} + e^{s₂})`, evaluated as a logistic of the gap.
/// `pair_probability(a, b) == 1 − pair_probability(b, a)` holds bit-exactly.
pub fn pair_probability(sum_left: f64, sum_right: f64) -> f64 {
    let d = sum_left - sum_right;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        1.0 - 1.0 / (1.0 + d.exp())
    }
}

/// Soft-label cross-entropy of one pair from its summed predictions.
pub fn pair_loss(sum_left: f64, sum_right: f64, z: f64) -> f64 {
    let d = sum_left - sum_right;
    z * softplus(-d) + (1.0 - z) * softplus(d)
}

/// Binary entropy `H(z)` in nats; the minimum of [`pair_loss`] over the gap.
pub fn binary_entropy(z: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    term(z) + term(1.0 - z)
}

/// One batch element: summed predictions of the two segments and the label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceTriple {
    pub left_return_hat: f64,
    pub right_return_hat: f64,
    pub z: f64,
}

/// Mean soft-label cross-entropy over the batch.
pub fn preference_loss(batch: &[PreferenceTriple]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = batch
        .iter()
        .map(|t| pair_loss(t.left_return_hat, t.right_return_hat, t.z))
        .sum();
    Ok(total / batch.len() as f64)
}

/// Welford mean / population variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningNorm {
    pub fn observe(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }

    pub fn warmed_up(&self) -> bool {
        self.count >= NORM_WARMUP
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std().max(1e-8)
    }

    pub fn from_parts(count: u64, mean: f64, std: f64) -> Self {
        Self {
            count,
            mean,
            m2: std * std * count as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedReward {
    pub value: f64,
    /// `false` while fewer than [`NORM_WARMUP`] predictions were seen; `value` is raw then.
    pub warmed_up: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardPredictor {
    pub net: Mlp,
    pub optimizer: AdamState,
    pub output_norm: RunningNorm,
    pub l2: f64,
    obs_dim: usize,
    act_dim: usize,
}

/// Per-epoch mean minibatch data loss (before each step) of one [`RewardPredictor::fit`] call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    pub epoch_losses: Vec<f64>,
}

impl RewardPredictor {
    /// `[obs + act, 64, 64, 1]` tanh network with Glorot weights.
    pub fn new(obs_dim: usize, act_dim: usize, step_size: f64, rng: &mut RngStream) -> Self {
        let net = Mlp::glorot(
            &default_sizes(obs_dim + act_dim, 1),
            Activation::Tanh,
            Activation::Identity,
            rng,
        );
        Self::from_net(net, obs_dim, act_dim, step_size)
    }

    pub fn from_net(net: Mlp, obs_dim: usize, act_dim: usize, step_size: f64) -> Self {
        assert_eq!(net.input_dim(), obs_dim + act_dim);
        assert_eq!(net.output_dim(), 1);
        let optimizer = AdamState::new(net.num_params(), step_size);
        Self {
            net,
            optimizer,
            output_norm: RunningNorm::default(),
            l2: DEFAULT_L2,
            obs_dim,
            act_dim,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    fn input(&self, observation: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if observation.len() != self.obs_dim {
            return Err(Error::Dimension {
                expected: self.obs_dim,
                got: observation.len(),
            });
        }
        if action.len() != self.act_dim {
            return Err(Error::Dimension {
                expected: self.act_dim,
                got: action.len(),
            });
        }
        let mut x = Vec::with_capacity(self.obs_dim + self.act_dim);
        x.extend_from_slice(observation);
        x.extend_from_slice(action);
        Ok(x)
    }

    /// Raw network output `r̂(o, a)`.
    pub fn predict_reward(&self, observation: &[f64], action: &[f64]) -> Result<f64> {
        let x = self.input(observation, action)?;
        Ok(self.net.forward(&x)?[0])
    }

    /// Σ r̂ over a segment.
    pub fn predicted_return(&self, segment: &Segment) -> f64 {
        let mut ws = Workspace::default();
        let mut x = Vec::with_capacity(self.obs_dim + self.act_dim);
        segment
            .transitions()
            .iter()
            .map(|t| {
                x.clear();
                x.extend_from_slice(&t.observation);
                x.extend_from_slice(&t.action);
                self.net.forward_with(&x, &mut ws)[0]
            })
            .sum()
    }

    /// Standardised prediction using statistics of the predictions seen so far,
    /// then folds this prediction into those statistics.
    pub fn normalized_reward(&mut self, observation: &[f64], action: &[f64]) -> Result<NormalizedReward> {
        let raw = self.predict_reward(observation, action)?;
        Ok(self.normalize_raw(raw))
    }

    pub fn normalize_raw(&mut self, raw: f64) -> NormalizedReward {
        let out = if self.output_norm.warmed_up() {
            NormalizedReward {
                value: self.output_norm.normalize(raw),
                warmed_up: true,
            }
        } else {
            log::trace!("reward normalisation not warmed up; returning raw prediction");
            NormalizedReward {
                value: raw,
                warmed_up: false,
            }
        };
        self.output_norm.observe(raw);
        out
    }

    /// Resets the normalisation statistics to the predictions over `segments`.
    pub fn recalibrate<'a>(&mut self, segments: impl IntoIterator<Item = &'a Segment>) {
        let mut norm = RunningNorm::default();
        let mut ws = Workspace::default();
        let mut x = Vec::new();
        for s in segments {
            for t in s.transitions() {
                x.clear();
                x.extend_from_slice(&t.observation);
                x.extend_from_slice(&t.action);
                norm.observe(self.net.forward_with(&x, &mut ws)[0]);
            }
        }
        self.output_norm = norm;
    }

    pub fn triples(&self, records: &[&PreferenceRecord]) -> Vec<PreferenceTriple> {
        records
            .iter()
            .map(|r| PreferenceTriple {
                left_return_hat: self.predicted_return(&r.left),
                right_return_hat: self.predicted_return(&r.right),
                z: r.z.value(),
            })
            .collect()
    }

    fn accumulate_segment(&self, segment: &Segment, upstream: f64, ws: &mut Workspace, x: &mut Vec<f64>, grad: &mut [f64]) {
        let up = [upstream];
        for t in segment.transitions() {
            x.clear();
            x.extend_from_slice(&t.observation);
            x.extend_from_slice(&t.action);
            self.net.forward_with(x, ws);
            self.net.backward_with(x, ws, &up, grad, None);
        }
    }

    /// Mean preference loss over `records` and its gradient with respect to the
    /// network parameters. With `with_l2` the penalty `½·λ·‖W‖²` on weight
    /// matrices is added to both.
    pub fn loss_and_grad(&self, records: &[&PreferenceRecord], with_l2: bool) -> Result<(f64, Vec<f64>)> {
        let (data, penalty, grad) = self.loss_parts(records, with_l2)?;
        Ok((data + penalty, grad))
    }

    /// `(data loss, L2 penalty, gradient of their sum)`.
    fn loss_parts(&self, records: &[&PreferenceRecord], with_l2: bool) -> Result<(f64, f64, Vec<f64>)> {
        if records.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = records.len() as f64;
        let mut grad = vec![0.0; self.net.num_params()];
        let mut ws = Workspace::default();
        let mut x = Vec::new();
        let mut loss = 0.0;
        for r in records {
            let sl = self.predicted_return(&r.left);
            let sr = self.predicted_return(&r.right);
            let z = r.z.value();
            loss += pair_loss(sl, sr, z);
            // d loss / d(sl − sr) = P̂ − ẑ
            let g = (pair_probability(sl, sr) - z) / n;
            if g != 0.0 {
                self.accumulate_segment(&r.left, g, &mut ws, &mut x, &mut grad);
                self.accumulate_segment(&r.right, -g, &mut ws, &mut x, &mut grad);
            }
        }
        loss /= n;
        let mut penalty = 0.0;
        if with_l2 && self.l2 > 0.0 {
            let mut offset = 0;
            for (k, shape) in self.net.layers().iter().enumerate() {
                let w = self.net.layer_weights(k);
                penalty += 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>();
                for (g, v) in grad[offset..offset + w.len()].iter_mut().zip(w) {
                    *g += self.l2 * v;
                }
                offset += shape.in_dim * shape.out_dim + shape.out_dim;
            }
        }
        Ok((loss, penalty, grad))
    }

    /// Adam over shuffled minibatches of the whole database.
    pub fn fit(
        &mut self,
        database: &[PreferenceRecord],
        epochs: usize,
        minibatch: usize,
        rng: &mut RngStream,
    ) -> Result<TrainingCurve> {
        if minibatch == 0 || database.len() < minibatch {
            return Err(Error::Config(format!(
                "database has {} records, minibatch needs {}",
                database.len(),
                minibatch
            )));
        }
        let mut order: Vec<usize> = (0..database.len()).collect();
        let mut curve = TrainingCurve::default();
        for epoch in 0..epochs {
            rng.shuffle(&mut order);
            let mut sum = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(minibatch) {
                let batch: Vec<&PreferenceRecord> = chunk.iter().map(|&i| &database[i]).collect();
                let (data_loss, penalty, grad) = self.loss_parts(&batch, true)?;
                let loss = data_loss + penalty;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "reward-model loss at epoch {epoch}, batch {batches}: {loss}"
                    )));
                }
                self.optimizer.step(self.net.params_mut(), &grad);
                sum += data_loss;
                batches += 1;
            }
            curve.epoch_losses.push(sum / batches as f64);
        }
        Ok(curve)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlib::EnvKind;
    use crate::numerics::{LayerShape, StreamId};
    use crate::oracle::{LabelSource, PreferenceScale};
    use crate::trajectory::Transition;

    #[test]
    fn probability_values() {
        assert_eq!(pair_probability(3.0, 3.0), 0.5);
        let e = std::f64::consts::E;
        assert!((pair_probability(1.0, 0.0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((pair_probability(1.0, 0.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert_eq!(pair_probability(1000.0, 0.0), 1.0);
        assert_eq!(pair_probability(0.0, 1000.0), 0.0);
        for (a, b) in [(0.3, -1.7), (12.0, 11.999), (-40.0, 2.0)] {
            assert_eq!(pair_probability(a, b), 1.0 - pair_probability(b, a));
        }
    }

    #[test]
    fn loss_values() {
        let t = |l: f64, r: f64, z: f64| PreferenceTriple { left_return_hat: l, right_return_hat: r, z };
        let v = preference_loss(&[t(2.0, 2.0, 0.5)]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(preference_loss(&[t(200.0, 0.0, 1.0)]).unwrap() < 1e-80);
        let v = preference_loss(&[t(3f64.ln(), 0.0, 0.75)]).unwrap();
        let h = -(0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((v - h).abs() < 1e-14);
        assert!((v - 0.562_335_144_618_808_7).abs() < 1e-12);
        assert!(matches!(preference_loss(&[]), Err(Error::EmptyBatch)));
        // no overflow for large gaps
        assert!(pair_loss(1e4, 0.0, 0.0).is_finite());
    }

    #[test]
    fn loss_is_bounded_by_entropy() {
        let mut rng = RngStream::new(3, StreamId::Custom(1));
        for _ in 0..1000 {
            let z = rng.uniform();
            let d = 10.0 * rng.normal();
            assert!(pair_loss(d, 0.0, z) >= binary_entropy(z) - 1e-12);
        }
    }

    #[test]
    fn zero_network_predicts_zero() {
        let net = Mlp::zeros(&[3, 64, 64, 1], Activation::Tanh, Activation::Identity);
        let m = RewardPredictor::from_net(net, 2, 1, 1e-4);
        assert_eq!(m.predict_reward(&[1.0, 2.0], &[3.0]).unwrap(), 0.0);
    }

    #[test]
    fn linear_predictor_by_hand() {
        let net = Mlp::from_parts(
            vec![LayerShape { in_dim: 2, out_dim: 1, activation: Activation::Identity }],
            vec![1.0, -1.0, 0.0],
        )
        .unwrap();
        let m = RewardPredictor::from_net(net, 1, 1, 1e-4);
        assert_eq!(m.predict_reward(&[2.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(m.predict_reward(&[2.0], &[1.0]).unwrap(), m.predict_reward(&[2.0], &[1.0]).unwrap());
        assert!(m.predict_reward(&[2.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn normalisation_streams() {
        let net = Mlp::zeros(&[2, 1], Activation::Identity, Activation::Identity);
        let mut m = RewardPredictor::from_net(net, 1, 1, 1e-4);
        let first = m.normalize_raw(5.0);
        assert!(!first.warmed_up);
        for _ in 0..200 {
            m.normalize_raw(5.0);
        }
        assert_eq!(m.normalize_raw(5.0).value, 0.0);

        let mut m = RewardPredictor::from_net(Mlp::zeros(&[2, 1], Activation::Identity, Activation::Identity), 1, 1, 1e-4);
        let mut out = Vec::new();
        for k in 0..4000 {
            out.push(m.normalize_raw(if k % 2 == 0 { 1.0 } else { 3.0 }));
        }
        assert_eq!(out[100].value, -1.0);
        for (k, n) in out.iter().enumerate().skip(3000) {
            let expect = if k % 2 == 0 { -1.0 } else { 1.0 };
            assert!((n.value - expect).abs() < 1e-3);
        }

        // affine shift leaves the normalised stream unchanged
        let mut a = RewardPredictor::from_net(Mlp::zeros(&[2, 1], Activation::Identity, Activation::Identity), 1, 1, 1e-4);
        let mut b = a.clone();
        let mut rng = RngStream::new(1, StreamId::Custom(2));
        for _ in 0..500 {
            let x = rng.normal();
            let na = a.normalize_raw(x);
            let nb = b.normalize_raw(7.0 + x);
            if na.warmed_up {
                assert!((na.value - nb.value).abs() < 1e-9);
            }
        }
    }

    fn segment_from(values: &[(f64, f64)]) -> Segment {
        Segment::new(
            values
                .iter()
                .map(|&(o, a)| Transition { observation: vec![o, -o], action: vec![a], true_reward: o, predicted_reward: 0.0 })
                .collect(),
            0,
            0,
        )
    }

    fn random_records(n: usize, rng: &mut RngStream) -> Vec<PreferenceRecord> {
        (0..n)
            .map(|_| {
                let mut seg = || {
                    let v: Vec<(f64, f64)> = (0..5).map(|_| (rng.normal(), rng.normal())).collect();
                    segment_from(&v)
                };
                let left = seg();
                let right = seg();
                PreferenceRecord {
                    env: EnvKind::VelocityRunner,
                    left,
                    right,
                    z: PreferenceScale::new(rng.uniform()).unwrap(),
                    source: LabelSource::OracleScaled,
                    timestep: 0,
                }
            })
            .collect()
    }

    #[test]
    fn loss_gradient_passes_gradient_check() {
        use crate::numerics::{gradient_check, GradCheckConfig};
        let mut rng = RngStream::new(10, StreamId::Custom(3));
        let model = RewardPredictor::new(2, 1, 1e-4, &mut rng);
        let records = random_records(5, &mut rng);
        let refs: Vec<&PreferenceRecord> = records.iter().collect();
        let (_, grad) = model.loss_and_grad(&refs, false).unwrap();
        let params = model.net.params().to_vec();
        let report = gradient_check(
            &params,
            &grad,
            |p| {
                let mut m = model.clone();
                m.net.params_mut().copy_from_slice(p);
                m.loss_and_grad(&refs, false).unwrap().0
            },
            GradCheckConfig { max_coords: 200, ..Default::default() },
        );
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn tied_half_labels_stay_at_ln2() {
        let mut rng = RngStream::new(4, StreamId::Custom(4));
        let mut model = RewardPredictor::new(2, 1, 1e-3, &mut rng);
        let seg = segment_from(&[(0.1, 0.2), (0.3, -0.1)]);
        let db: Vec<PreferenceRecord> = (0..16)
            .map(|_| PreferenceRecord {
                env: EnvKind::VelocityRunner,
                left: seg.clone(),
                right: seg.clone(),
                z: PreferenceScale::EQUAL,
                source: LabelSource::OracleScaled,
                timestep: 0,
            })
            .collect();
        let curve = model.fit(&db, 5, 8, &mut rng).unwrap();
        for l in curve.epoch_losses {
            assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_is_deterministic_and_rejects_small_databases() {
        let mut rng = RngStream::new(6, StreamId::Custom(5));
        let db = random_records(20, &mut rng);
        let run = || {
            let mut r = RngStream::new(1, StreamId::Init);
            let mut m = RewardPredictor::new(2, 1, 1e-3, &mut r);
            let mut s = RngStream::new(1, StreamId::Shuffle);
            m.fit(&db, 3, 8, &mut s).unwrap();
            m.net
        };
        assert_eq!(run(), run());
        let mut r = RngStream::new(1, StreamId::Init);
        let mut m = RewardPredictor::new(2, 1, 1e-3, &mut r);
        assert!(m.fit(&db[..4], 1, 8, &mut r).is_err());
    }
}
