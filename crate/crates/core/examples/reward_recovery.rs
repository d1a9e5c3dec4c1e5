//! Fits the reward model to oracle-scaled labels on random `velocity_runner` segments
//! and reports the Spearman correlation between r̂ and the true reward on a grid.
//!
//! cargo run --release --example reward_recovery -- [labels] [epochs] [seed]

use prefscale::envlib::{reset, true_reward_from_observation, EnvKind, EnvSpec};
use prefscale::numerics::rng::{RngStream, StreamId};
use prefscale::oracle::{PreferenceRecord, ScalingContext, SyntheticOracle};
use prefscale::reward_model::RewardPredictor;
use prefscale::trajectory::{Segment, Transition};

/// One segment from an episode driven by a per-episode throttle bias plus noise.
fn random_segment(spec: &EnvSpec, rng: &mut RngStream, length: usize) -> Segment {
    let (mut state, mut obs) = reset(spec, rng.next_u64());
    let bias = rng.uniform_range(-1.0, 1.0);
    let start = length * rng.index(spec.horizon / length);
    let mut transitions = Vec::with_capacity(length);
    while transitions.len() < length {
        let action = vec![(bias + 0.3 * rng.normal()).clamp(-1.0, 1.0)];
        let (next, step) = state.step(&action).expect("in bounds");
        if state.step_index >= start {
            transitions.push(Transition {
                observation: obs.clone(),
                action,
                true_reward: step.true_reward,
                predicted_reward: 0.0,
            });
        }
        obs = step.observation;
        state = next;
    }
    Segment::new(transitions, 0, start)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn main() -> prefscale::Result<()> {
    let mut args = std::env::args().skip(1);
    let labels: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let kind = EnvKind::VelocityRunner;
    let spec = EnvSpec::new(kind);
    let mut rng = RngStream::new(seed, StreamId::Environment);
    let mut oracle = SyntheticOracle::Scaled(ScalingContext::new());
    let mut db = Vec::with_capacity(labels);
    for k in 0..labels {
        let left = random_segment(&spec, &mut rng, 25);
        let right = random_segment(&spec, &mut rng, 25);
        let z = oracle.label(&left, &right)?;
        db.push(PreferenceRecord {
            env: kind,
            left,
            right,
            z,
            source: oracle.source(),
            timestep: k as u64,
        });
    }

    let t = std::time::Instant::now();
    let mut model = RewardPredictor::new(3, 1, 1e-4, &mut RngStream::new(seed, StreamId::Init));
    let curve = model.fit(&db, epochs, 64, &mut RngStream::new(seed, StreamId::Shuffle))?;
    println!(
        "fit {} labels for {} epochs in {:.1}s, loss {:.4} -> {:.4}",
        labels,
        epochs,
        t.elapsed().as_secs_f64(),
        curve.epoch_losses[0],
        curve.epoch_losses[epochs - 1]
    );

    let grid = |lo: f64, hi: f64| (0..10).map(move |i| lo + (hi - lo) * i as f64 / 9.0);
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for v in grid(-2.0, 12.0) {
        for x in grid(-std::f64::consts::PI, std::f64::consts::PI) {
            for a in grid(-1.0, 1.0) {
                let obs = [v, x.sin(), x.cos()];
                pred.push(model.predict_reward(&obs, &[a])?);
                truth.push(true_reward_from_observation(kind, &obs, &[a]).expect("runner"));
            }
        }
    }
    println!("spearman(r_hat, r) over {} grid points: {:.4}", pred.len(), spearman(&pred, &truth));
    Ok(())
}
