//! A scripted labeller talking to the HTTP label service while a short
//! `velocity_runner` run trains on its answers.
//!
//! The client sees only the 2-D traces. It prefers the clip that travels further
//! around the track and grades the strength of that preference by the gap.
//!
//! cargo run --release --example label_service_client -- [steps] [budget]

use std::sync::Arc;
use std::time::Duration;

use prefscale::label_service::{spawn_server, LabelHub, QueryPayload, StatusSnapshot};
use prefscale::orchestrator::{run_experiment, Labeler, Mode, RunConfig};

/// Signed angle swept by a trace of points on the unit circle.
fn swept_angle(trace: &[[f64; 2]]) -> f64 {
    trace
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0][1].atan2(w[0][0]), w[1][1].atan2(w[1][0]));
            let mut d = b - a;
            while d > std::f64::consts::PI {
                d -= 2.0 * std::f64::consts::PI;
            }
            while d < -std::f64::consts::PI {
                d += 2.0 * std::f64::consts::PI;
            }
            d
        })
        .sum()
}

fn judge(q: &QueryPayload) -> f64 {
    let gap = swept_angle(&q.left_trace) - swept_angle(&q.right_trace);
    (0.5 + gap / 4.0).clamp(0.0, 1.0)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(30_000);
    let budget: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);

    let hub = Arc::new(LabelHub::new());
    let server = spawn_server(Arc::clone(&hub), "127.0.0.1:0".parse()?)?;
    let base = format!("http://{}", server.addr);
    println!("label service on {base}");

    let config = RunConfig {
        labeler: Labeler::HumanUi,
        mode: Mode::Async,
        total_steps: steps,
        label_budget: budget,
        query_timeout_secs: 30,
        ..RunConfig::default()
    };
    let dir = std::env::temp_dir().join("prefscale-label-client");
    let run_hub = Arc::clone(&hub);
    let trainer = std::thread::spawn(move || run_experiment(&config, &dir, Some(run_hub)));

    let (mut answered, mut reported) = (0, 0);
    while !trainer.is_finished() {
        match ureq::get(&format!("{base}/api/query")).call() {
            Ok(resp) if resp.status() == 200 => {
                let q: QueryPayload = serde_json::from_str(&resp.into_string()?)?;
                let z = judge(&q);
                let body = serde_json::json!({ "query_id": q.query_id, "z": z }).to_string();
                match ureq::post(&format!("{base}/api/label"))
                    .set("content-type", "application/json")
                    .send_string(&body)
                {
                    Ok(_) => answered += 1,
                    Err(e) => println!("label for query {} refused: {e}", q.query_id),
                }
            }
            _ => std::thread::sleep(Duration::from_millis(50)),
        }
        if answered >= reported + 20 {
            reported = answered;
            let s: StatusSnapshot = serde_json::from_str(&ureq::get(&format!("{base}/api/status")).call()?.into_string()?)?;
            println!("status: {} steps, {} of {} labels", s.steps_done, s.labels_done, s.budget);
        }
    }
    let run = trainer.join().expect("trainer thread")?;
    server.stop();
    println!(
        "answered {answered}; run used {} human and {} estimator labels, greedy return {:.2}",
        run.summary.human_labels, run.summary.estimator_labels, run.final_return()
    );
    Ok(())
}
