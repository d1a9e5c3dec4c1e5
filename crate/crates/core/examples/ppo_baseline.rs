//! PPO on the true environment reward of `velocity_runner`.
//!
//! cargo run --release --example ppo_baseline -- [seed] [steps]

use prefscale::envlib::velocity_runner_max_return;
use prefscale::orchestrator::{run_experiment, Labeler, RunConfig};

fn main() -> prefscale::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let config = RunConfig {
        labeler: Labeler::TrueRewardBaseline,
        total_steps: steps,
        seed,
        ..RunConfig::default()
    };
    let dir = std::env::temp_dir().join(format!("prefscale-ppo-baseline-{seed}"));
    let t = std::time::Instant::now();
    let run = run_experiment(&config, &dir, None)?;
    for row in run.metrics.iter().step_by(5) {
        println!("step {:>6}  true return {:>7.2}", row.step, row.true_return);
    }
    let max = velocity_runner_max_return();
    println!(
        "greedy return {:.2} of {:.1} ({:.0}%) in {:.1}s; artifacts in {}",
        run.final_return(),
        max,
        100.0 * run.final_return() / max,
        t.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(())
}
