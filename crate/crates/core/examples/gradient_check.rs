//! Finite-difference checks of the reward-model preference loss and the PPO loss.
//!
//! cargo run --release --example gradient_check

use prefscale::envlib::EnvKind;
use prefscale::numerics::{gradient_check, GradCheckConfig, RngStream, StreamId};
use prefscale::oracle::{LabelSource, PreferenceRecord, PreferenceScale};
use prefscale::policy::{ppo_loss_and_grad, PolicyParams, PpoConfig, PpoSample};
use prefscale::reward_model::RewardPredictor;
use prefscale::trajectory::{Segment, Transition};

fn segment(rng: &mut RngStream) -> Segment {
    Segment::new(
        (0..25)
            .map(|_| Transition {
                observation: (0..3).map(|_| rng.normal()).collect(),
                action: vec![rng.uniform_range(-1.0, 1.0)],
                true_reward: 0.0,
                predicted_reward: 0.0,
            })
            .collect(),
        0,
        0,
    )
}

fn main() -> prefscale::Result<()> {
    let mut rng = RngStream::new(5, StreamId::Custom(9));
    let cfg = GradCheckConfig {
        max_coords: 200,
        ..GradCheckConfig::default()
    };

    let mut model = RewardPredictor::new(3, 1, 1e-4, &mut rng.fork(StreamId::Init));
    let records: Vec<PreferenceRecord> = (0..8)
        .map(|k| PreferenceRecord {
            env: EnvKind::VelocityRunner,
            left: segment(&mut rng),
            right: segment(&mut rng),
            z: PreferenceScale::new(rng.uniform()).expect("in range"),
            source: LabelSource::OracleScaled,
            timestep: k,
        })
        .collect();
    let refs: Vec<&PreferenceRecord> = records.iter().collect();
    let (_, grad) = model.loss_and_grad(&refs, true)?;
    let params = model.net.params().to_vec();
    let report = gradient_check(
        &params,
        &grad,
        |p| {
            model.net.params_mut().copy_from_slice(p);
            model.loss_and_grad(&refs, true).expect("finite").0
        },
        cfg,
    );
    println!("preference loss: {} coords, max rel err {:.2e}, pass {}", report.checked, report.max_rel_error, report.pass);

    let policy = PolicyParams::new(3, 1, &mut rng.fork(StreamId::Init));
    let batch: Vec<PpoSample> = (0..32)
        .map(|_| {
            let observation: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let mean = policy.mean_action(&observation).expect("dims");
            let action = vec![mean[0] + rng.normal()];
            PpoSample {
                old_log_prob: policy.log_prob(&mean, &action) + rng.uniform_range(-0.3, 0.3),
                observation,
                action,
                advantage: rng.normal(),
                value_target: rng.normal(),
            }
        })
        .collect();
    let config = PpoConfig::default();
    let (_, grad) = ppo_loss_and_grad(&policy, &batch, &config)?;
    let mut probe = policy.clone();
    let report = gradient_check(
        &policy.flatten(),
        &grad,
        |p| {
            probe.load_flat(p);
            ppo_loss_and_grad(&probe, &batch, &config).expect("finite").0
        },
        cfg,
    );
    println!("ppo loss:        {} coords, max rel err {:.2e}, pass {}", report.checked, report.max_rel_error, report.pass);
    Ok(())
}
