//! Replaces a share of the label budget with estimator answers and reports the
//! final return and label ledger for each share.
//!
//! cargo run --release --example demo_replacement -- [seed] [steps] [budget]

use prefscale::orchestrator::{run_experiment, Labeler, RoutePlan, RunConfig};

fn main() -> prefscale::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let budget: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);

    let plan = RoutePlan::new(1400, 0.3, 0.4);
    println!(
        "long-run plan, 1400 labels at 30%: {} human ({} up front), {} estimator\n",
        plan.human_total(),
        plan.initial_human,
        plan.estimator_total
    );
    println!("{:>5} {:>9} {:>6} {:>10} {:>13} {:>8}", "rho", "return", "human", "estimator", "substituted", "fits");
    let root = std::env::temp_dir().join("prefscale-demo-replacement");
    for rho in [0.0, 0.3, 0.5] {
        let config = RunConfig {
            labeler: Labeler::OracleScaled,
            demo_fraction: rho,
            total_steps: steps,
            label_budget: budget,
            seed,
            ..RunConfig::default()
        };
        let run = run_experiment(&config, &root.join(format!("rho{rho}")), None)?;
        let l = &run.ledger;
        println!(
            "{rho:>5.1} {:>9.2} {:>6} {:>10} {:>13} {:>8}",
            run.final_return(),
            l.human_count,
            l.estimator_count,
            l.substitutions.len(),
            l.estimator_fits.len()
        );
        for f in &l.estimator_fits {
            println!(
                "      fit at query {:>3} on {:>3} labels: {} (ols {:.4}, svr {:.4})",
                f.query_index,
                f.human_labels,
                f.method,
                f.ols_mse,
                f.svr_mse
            );
        }
    }
    Ok(())
}
