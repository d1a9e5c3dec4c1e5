//! Command-line driver. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::envlib::EnvKind;
use crate::error::Error;
use crate::estimator::{self, EstimatorConfig, EstimatorDataset};
use crate::label_service::{spawn_server, LabelHub};
use crate::orchestrator::persist::{load_db, load_policy};
use crate::orchestrator::{evaluate_greedy, run_experiment, Labeler, Mode, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Minimum database size for `estimator-bench`.
pub const BENCH_MIN_RECORDS: usize = 50;

#[derive(Debug, Parser)]
#[command(name = "prefscale", version, about = "Preference-scaled reward learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one training experiment.
    Train(TrainArgs),
    /// Greedy evaluation of a policy checkpoint.
    Eval(EvalArgs),
    /// OLS vs SVR held-out MSE on a preference database.
    EstimatorBench(BenchArgs),
    /// Serve the labelling API and train with human labels.
    Serve(ServeArgs),
    /// Print a stored pair and its label.
    Replay(ReplayArgs),
}

#[derive(Debug, Args, Clone)]
struct RunFlags {
    /// Flat `key = value` config file; its values win over flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    labeler: Option<String>,
    #[arg(long)]
    budget: Option<usize>,
    /// Long-run budget preset (1400 or 700).
    #[arg(long, num_args = 0..=1, default_missing_value = "1400")]
    paper_budgets: Option<usize>,
    /// Share of labels answered by the estimator, 0 to 0.5.
    #[arg(long)]
    demo_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, conflicts_with = "async_mode")]
    sync: bool,
    #[arg(long = "async")]
    async_mode: bool,
    /// Require labels / steps <= 1e-4.
    #[arg(long)]
    faithful_budget: bool,
    /// Any other config key, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Run directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the checkpoint's environment.
    #[arg(long)]
    env: Option<String>,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the summary as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    db: PathBuf,
    /// Training share in percent.
    #[arg(long, default_value_t = 70)]
    split: u32,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long, default_value_t = 8787)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value = "runs/human")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    index: usize,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Flags first, then the config file on top; conflicting keys are reported.
fn build_config(flags: &RunFlags) -> std::result::Result<RunConfig, Failure> {
    let mut c = RunConfig::default();
    let mut from_flags: Vec<(&'static str, String)> = Vec::new();
    let mut set = |c: &mut RunConfig, key: &'static str, value: String| -> std::result::Result<(), Failure> {
        c.set(key, &value).map_err(|e| usage(e.to_string()))?;
        from_flags.push((key, value));
        Ok(())
    };
    if let Some(v) = &flags.env {
        set(&mut c, "env", v.clone())?;
    }
    if let Some(v) = &flags.labeler {
        set(&mut c, "labeler", v.clone())?;
    }
    if let Some(v) = flags.paper_budgets {
        if !crate::orchestrator::PAPER_BUDGETS.contains(&v) {
            return Err(usage(format!("--paper-budgets accepts 1400 or 700, got {v}")));
        }
        set(&mut c, "label_budget", v.to_string())?;
    }
    if let Some(v) = flags.budget {
        set(&mut c, "label_budget", v.to_string())?;
    }
    if let Some(v) = flags.demo_fraction {
        set(&mut c, "demo_fraction", v.to_string())?;
    }
    if let Some(v) = flags.seed {
        set(&mut c, "seed", v.to_string())?;
    }
    if let Some(v) = flags.steps {
        set(&mut c, "total_steps", v.to_string())?;
    }
    if flags.sync {
        set(&mut c, "mode", "sync".into())?;
    }
    if flags.async_mode {
        set(&mut c, "mode", "async".into())?;
    }
    if flags.faithful_budget {
        set(&mut c, "faithful_budget", "true".into())?;
    }
    for kv in &flags.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got '{kv}'")))?;
        let key = RunConfig::KEYS
            .iter()
            .find(|known| **known == k.trim())
            .ok_or_else(|| usage(format!("unknown config key '{k}'")))?;
        set(&mut c, key, v.to_string())?;
    }
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        let before = c.clone();
        let keys = c.apply_file_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        for (k, v) in &from_flags {
            if keys.iter().any(|fk| fk == k) {
                let mut probe = before.clone();
                probe.set(k, v).ok();
                if probe.entries() != c.entries() {
                    log::warn!("config file {} overrides flag value for '{k}'", path.display());
                    eprintln!("warning: config file overrides the flag value for '{k}'");
                }
            }
        }
    }
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let config = build_config(&args.run)?;
    if config.labeler == Labeler::HumanUi {
        return Err(usage("the human_ui labeler runs through `serve`"));
    }
    let run = run_experiment(&config, &args.out, None)?;
    let s = &run.summary;
    writeln!(
        out,
        "run complete: {} steps, greedy return {:.3} ± {:.3}, labels {} (human {}, estimator {}), artifacts in {}",
        s.steps,
        s.final_return,
        s.final_return_std,
        s.labels,
        s.human_labels,
        s.estimator_labels,
        run.dir.display()
    )
    .map_err(|e| Failure::Runtime(e.to_string()))
}

fn cmd_eval(args: EvalArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let (ckpt_env, params) = load_policy(&args.checkpoint)?;
    let env = match &args.env {
        Some(e) => e.parse::<EnvKind>().map_err(|e| usage(e.to_string()))?,
        None => ckpt_env,
    };
    let (mean, std) = evaluate_greedy(&params, env, args.episodes, args.seed)?;
    let json = serde_json::json!({
        "env": env.name(),
        "episodes": args.episodes,
        "seed": args.seed,
        "mean_return": mean,
        "std_return": std,
    });
    if let Some(p) = &args.out {
        fs::write(p, format!("{json}\n")).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    writeln!(out, "{} episodes on {}: mean return {mean} std {std}", args.episodes, env.name())
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn cmd_bench(args: BenchArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let records = load_db(&args.db)?;
    if records.len() < BENCH_MIN_RECORDS {
        return Err(Failure::Runtime(format!(
            "database has {} records; estimator-bench needs at least {BENCH_MIN_RECORDS}",
            records.len()
        )));
    }
    if args.split != 50 && args.split != 70 {
        return Err(usage(format!("--split must be 50 or 70, got {}", args.split)));
    }
    if args.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let env = records[0].env;
    let data = EstimatorDataset::from_records(&records)?;
    let cfg = EstimatorConfig {
        train_fraction: f64::from(args.split) / 100.0,
        ..EstimatorConfig::default()
    };
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let rows = estimator::benchmark(&format!("{}_{}", env.name(), args.split), &data, &cfg, &seeds)?;
    let mut buf = Vec::new();
    estimator::write_report(&mut buf, &rows).map_err(|e| Failure::Runtime(e.to_string()))?;
    if let Some(p) = &args.out {
        fs::write(p, &buf).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    out.write_all(&buf).map_err(|e| Failure::Runtime(e.to_string()))
}

fn cmd_serve(args: ServeArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let mut config = build_config(&args.run)?;
    config.labeler = Labeler::HumanUi;
    config.mode = Mode::Async;
    config.validate().map_err(|e| usage(e.to_string()))?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| usage(format!("bad address: {e}")))?;
    let hub = Arc::new(LabelHub::new());
    let server = spawn_server(Arc::clone(&hub), addr)?;
    writeln!(out, "label service on http://{}", server.addr).map_err(|e| Failure::Runtime(e.to_string()))?;
    let run = run_experiment(&config, &args.out, Some(hub));
    server.stop();
    let run = run?;
    writeln!(
        out,
        "run complete: greedy return {:.3}, human labels {}, estimator labels {}",
        run.summary.final_return, run.summary.human_labels, run.summary.estimator_labels
    )
    .map_err(|e| Failure::Runtime(e.to_string()))
}

fn cmd_replay(args: ReplayArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let records = load_db(&args.db)?;
    let rec = records.get(args.index).ok_or_else(|| {
        Failure::Runtime(format!("index {} out of range; database has {} records", args.index, records.len()))
    })?;
    let io = |e: std::io::Error| Failure::Runtime(e.to_string());
    writeln!(
        out,
        "record {} env {} z {} source {} timestep {}",
        args.index,
        rec.env.name(),
        rec.z.value(),
        rec.source,
        rec.timestep
    )
    .map_err(io)?;
    for (side, seg) in [("left", &rec.left), ("right", &rec.right)] {
        writeln!(
            out,
            "{side}: {} frames, true_return {} (recomputed {})",
            seg.len(),
            seg.true_return(),
            seg.recomputed_return()
        )
        .map_err(io)?;
        for (t, p) in crate::label_service::segment_trace(rec.env, seg).iter().enumerate() {
            writeln!(out, "  {t:>3} {:>10.5} {:>10.5}", p[0], p[1]).map_err(io)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>, out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::EstimatorBench(a) => cmd_bench(a, out),
        Command::Serve(a) => cmd_serve(a, out),
        Command::Replay(a) => cmd_replay(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_FAILURE
        }
    }
}
