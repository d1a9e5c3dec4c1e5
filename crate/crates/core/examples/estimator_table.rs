//! Held-out MSE of the OLS and SVR label estimators on oracle-scaled pairs from
//! each environment, at 50/50 and 70/30 splits. Prints the estimator report CSV.
//!
//! cargo run --release --example estimator_table -- [records] [seeds]

use prefscale::envlib::{reset, EnvKind, EnvSpec};
use prefscale::estimator::{benchmark, write_report, EstimatorConfig, EstimatorDataset};
use prefscale::numerics::{RngStream, StreamId};
use prefscale::oracle::{PreferenceRecord, ScalingContext, SyntheticOracle};
use prefscale::trajectory::{Segment, Transition};

/// 25-step window of an episode driven by a per-episode action bias plus noise.
fn random_segment(spec: &EnvSpec, rng: &mut RngStream) -> Segment {
    let length = 25;
    let (mut state, mut obs) = reset(spec, rng.next_u64());
    let bias: Vec<f64> = (0..spec.act_dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let start = length * rng.index(spec.horizon / length);
    let mut transitions = Vec::with_capacity(length);
    while transitions.len() < length {
        let action: Vec<f64> = bias.iter().map(|b| b + 0.3 * rng.normal()).collect();
        let action = spec.clamp_action(&action);
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

fn main() -> prefscale::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut rows = Vec::new();
    for kind in EnvKind::ALL {
        let spec = EnvSpec::new(kind);
        let mut rng = RngStream::new(11, StreamId::Environment);
        let mut oracle = SyntheticOracle::Scaled(ScalingContext::new());
        let mut records = Vec::with_capacity(n);
        for k in 0..n {
            let (left, right) = (random_segment(&spec, &mut rng), random_segment(&spec, &mut rng));
            let z = oracle.label(&left, &right)?;
            records.push(PreferenceRecord {
                env: kind,
                left,
                right,
                z,
                source: oracle.source(),
                timestep: k as u64,
            });
        }
        let data = EstimatorDataset::from_records(&records)?;
        let seeds: Vec<u64> = (0..seeds).collect();
        for split in [50, 70] {
            let cfg = EstimatorConfig {
                train_fraction: f64::from(split) / 100.0,
                ..EstimatorConfig::default()
            };
            rows.extend(benchmark(&format!("{}_{split}", kind.name()), &data, &cfg, &seeds)?);
        }
    }
    write_report(&mut std::io::stdout(), &rows)?;
    Ok(())
}
