use clap::{Parser, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};
use v2xsim::allocator::{
    allocate_h45v, parse_instance, render_instance, solve_optimal, AllocationInstance,
    AllocationResult, RandomInstance, SolverConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Solver {
    H45v,
    Optimal,
    Both,
}

/// Times the allocators on an instance file or on a doubling sweep of random
/// instances.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Instance file; omitted, a random sweep runs instead.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "h45v")]
    solver: Solver,
    /// Group counts of the random sweep (the grid is as wide as the count).
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    sweep: Vec<usize>,
    /// Instances per sweep point.
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Timed repetitions per instance; the median is reported.
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Search-node budget of the optimal solver.
    #[arg(long, default_value_t = 5_000_000)]
    node_budget: u64,
    /// Print the first generated instance of each sweep point.
    #[arg(long)]
    dump: bool,
}

fn median_time(reps: usize, f: impl Fn() -> AllocationResult) -> (Duration, AllocationResult) {
    let mut times = Vec::with_capacity(reps.max(1));
    let mut last = None;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        let r = f();
        times.push(t.elapsed());
        last = Some(r);
    }
    times.sort();
    (
        times[times.len() / 2],
        last.expect("at least one repetition"),
    )
}

fn report(label: &str, inst: &AllocationInstance, args: &Args) -> Result<(), String> {
    let cfg = SolverConfig {
        node_budget: args.node_budget,
        ..SolverConfig::default()
    };
    let mut runs: Vec<(&str, Duration, AllocationResult)> = Vec::new();
    if args.solver != Solver::Optimal {
        let (t, r) = median_time(args.reps, || allocate_h45v(inst));
        runs.push(("h45v", t, r));
    }
    if args.solver != Solver::H45v {
        let (t, r) = median_time(args.reps, || solve_optimal(inst, cfg));
        runs.push(("optimal", t, r));
    }
    for (name, t, r) in &runs {
        r.verify(inst)
            .map_err(|e| format!("{label}: {name} produced an invalid grid: {e}"))?;
        println!(
            "{label} solver={name} groups={} subchannels={} time_us={:.1} placements={} nodes={} exact={} {}",
            inst.groups.len(),
            inst.grid.subchannels(),
            t.as_secs_f64() * 1e6,
            r.placements.len(),
            r.stats.nodes,
            r.stats.optimal,
            r.objective
        );
    }
    Ok(())
}

fn run(args: &Args) -> Result<(), String> {
    if let Some(path) = &args.instance {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let inst = parse_instance(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        return report(&path.display().to_string(), &inst, args);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for &n in &args.sweep {
        let spec = RandomInstance::scaled(n);
        let mut total = Duration::ZERO;
        for k in 0..args.instances {
            let inst = spec.generate(&mut rng);
            if args.dump && k == 0 {
                print!("{}", render_instance(&inst));
            }
            let (t, _) = median_time(args.reps, || allocate_h45v(&inst));
            total += t;
            if args.solver != Solver::H45v {
                report(&format!("n={n}#{k}"), &inst, args)?;
            }
        }
        let mean = total.as_secs_f64() / args.instances.max(1) as f64;
        let model = (n * n) as f64 * (n as f64).ln();
        println!(
            "sweep n={n} h45v_mean_us={:.2} per_n2logn_ns={:.3}",
            mean * 1e6,
            mean * 1e9 / model
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
