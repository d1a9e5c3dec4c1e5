//! Steps each toy environment under a fixed open-loop action and prints a few
//! observations, rewards and the 2-D trace frames used for playback.
//!
//! cargo run --example envs_tour

use prefscale::envlib::{reset, trace_frame, velocity_runner_max_return, EnvKind, EnvSpec};

fn main() -> prefscale::Result<()> {
    for kind in EnvKind::ALL {
        let spec = EnvSpec::new(kind);
        println!(
            "{} obs_dim {} act_dim {} horizon {}",
            kind.name(),
            spec.obs_dim,
            spec.act_dim,
            spec.horizon
        );
        let (mut state, mut obs) = reset(&spec, 7);
        let action = vec![0.5; spec.act_dim];
        let mut total = 0.0;
        let mut t = 0;
        while !state.is_done() {
            let (next, step) = state.step(&action)?;
            if t % 50 == 0 {
                let f = trace_frame(kind, &obs);
                println!("  t={t:>3} obs {:>7.3?} reward {:>8.4} frame ({:>6.3}, {:>6.3})", obs, step.true_reward, f[0], f[1]);
            }
            total += step.true_reward;
            obs = step.observation;
            state = next;
            t += 1;
        }
        println!("  episode return {total:.3}\n");
    }
    println!("velocity_runner analytic maximum {:.1}", velocity_runner_max_return());
    Ok(())
}
