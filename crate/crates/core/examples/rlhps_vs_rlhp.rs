//! Scaled-label (RLHPS) versus hard-label (RLHP) preference learning against the
//! true-reward PPO baseline, several seeds each, on `velocity_runner`.
//!
//! cargo run --release --example rlhps_vs_rlhp -- [seeds] [steps] [budget] [labelers]
//!
//! `labelers` is a comma list, default `true_reward_baseline,oracle_scaled,oracle_hard`.

use prefscale::envlib::velocity_runner_max_return;
use prefscale::orchestrator::{run_experiment, Labeler, RunConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn main() -> prefscale::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let budget: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let labelers: Vec<Labeler> = match args.next() {
        Some(list) => list.split(',').map(str::parse).collect::<prefscale::Result<_>>()?,
        None => vec![Labeler::TrueRewardBaseline, Labeler::OracleScaled, Labeler::OracleHard],
    };
    let root = std::env::temp_dir().join("prefscale-rlhps-vs-rlhp");
    println!("{:<22} {:>5} {:>10} {:>8}", "labeler", "seed", "return", "secs");
    let mut medians = Vec::new();
    for labeler in labelers {
        let mut finals = Vec::new();
        for seed in 0..seeds {
            let config = RunConfig {
                labeler,
                total_steps: steps,
                label_budget: budget,
                seed,
                ..RunConfig::default()
            };
            let t = std::time::Instant::now();
            let run = run_experiment(&config, &root.join(format!("{labeler}-{seed}")), None)?;
            println!("{:<22} {:>5} {:>10.2} {:>8.1}", labeler.name(), seed, run.final_return(), t.elapsed().as_secs_f64());
            finals.push(run.final_return());
        }
        medians.push((labeler, median(finals)));
    }
    println!();
    let max = velocity_runner_max_return();
    for (l, m) in &medians {
        println!("{:<22} median {:>8.2} ({:.0}% of max)", l.name(), m, 100.0 * m / max);
    }
    Ok(())
}
