use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use v2xsim::scenario::{
    load_config, load_trace, render_summary, run_scenario, write_results, ScenarioConfig,
};
use v2xsim::sim::{AllocatorKind, DeploymentMode};

/// Runs one dual-connectivity V2X scenario and writes flows.csv and
/// summary.toml.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Scenario TOML; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mobility CSV with columns time,vehicle_id,x,y.
    #[arg(long, conflicts_with = "synth")]
    trace: Option<PathBuf>,
    /// Synthesize corridor mobility for this many vehicles.
    #[arg(long)]
    synth: Option<usize>,
    #[arg(long)]
    mode: Option<DeploymentMode>,
    #[arg(long)]
    allocator: Option<AllocatorKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Traffic generation time in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn run(args: Args) -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(a) = args.allocator {
        cfg.allocator = a;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = args.duration {
        cfg.duration_s = d;
    }
    if let Some(n) = args.synth {
        cfg.corridor.vehicles = n;
    }
    let timeline = args.trace.as_deref().map(load_trace).transpose()?;
    let (out, info) = run_scenario(&cfg, timeline)?;
    write_results(&args.out, &out.log, &info)?;
    print!("{}", render_summary(&out.log, &info));
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
