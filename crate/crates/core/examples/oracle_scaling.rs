//! Scaled versus hard oracle labels on a stream of reward pairs, showing how the
//! percentile bounds settle as the reward list grows.
//!
//! cargo run --example oracle_scaling -- [pairs] [window]

use prefscale::numerics::{RngStream, StreamId};
use prefscale::oracle::{hard_preference, ScalingContext};

fn main() {
    let mut args = std::env::args().skip(1);
    let pairs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let window: Option<usize> = args.next().and_then(|s| s.parse().ok());
    let mut ctx = window.map_or_else(ScalingContext::new, ScalingContext::windowed);
    let mut rng = RngStream::new(1, StreamId::Custom(0));

    println!("{:>4} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6}", "k", "R_left", "R_right", "R_min", "R_max", "hard", "scaled");
    for k in 0..pairs {
        // returns drift upward, as they would while a policy improves
        let drift = 2.0 * k as f64;
        let l = drift + 10.0 * rng.normal();
        let r = drift + 10.0 * rng.normal();
        ctx.update(l, r).expect("finite");
        let z = ctx.scale_preference(l, r).value();
        let (lo, hi) = ctx.bounds().expect("non-empty");
        println!(
            "{k:>4} {l:>8.2} {r:>8.2} {lo:>8.2} {hi:>8.2} {:>6.2} {z:>6.3}",
            hard_preference(l, r).value()
        );
    }
    println!("\nreward list holds {} values", ctx.len());
}
