use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hetnet_sca::driver::Algorithm;
use hetnet_sca::network::load_config;
use hetnet_sca_cli::{parse_seeds, run_experiment, CliError, ExperimentPlan, SweepAxis};

/// Run seeded precoder-design experiments and write CSV traces and summaries.
#[derive(Parser, Debug)]
#[command(name = "hetnet-sca", version, about)]
struct Args {
    /// Network configuration (JSON).
    #[arg(long)]
    config: PathBuf,

    /// Sweep axis `<field>=<v1,v2,...>`; repeat for a grid.
    #[arg(long = "sweep", value_name = "FIELD=VALUES")]
    sweeps: Vec<String>,

    /// Algorithm to run (`sca` or `insca`); repeatable.
    #[arg(long = "algo", value_name = "ALGO")]
    algos: Vec<Algorithm>,

    /// Seeds: a count `n` (seeds 0..n), a list `3,7,9` or a range `a..b`.
    #[arg(long, default_value = "1")]
    seeds: String,

    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,

    /// Random starts per run; the best final objective is reported.
    #[arg(long, default_value_t = 1)]
    restarts: usize,

    /// Relative objective change that stops the outer loop.
    #[arg(long, default_value_t = 1e-3)]
    outer_tol: f64,

    /// Relative round gain that stops SCA's inner loop.
    #[arg(long, default_value_t = 1e-3)]
    inner_tol: f64,

    #[arg(long, default_value_t = 2000)]
    max_iters: usize,

    /// Record wall-clock times (outputs are then no longer reproducible).
    #[arg(long)]
    timing: bool,

    /// Worker threads for independent runs.
    #[arg(long)]
    jobs: Option<usize>,
}

fn build_plan(args: Args) -> Result<ExperimentPlan, CliError> {
    let base = load_config(&args.config)?;
    let mut plan = ExperimentPlan::new(base, args.out);
    plan.sweeps = args.sweeps.iter().map(|s| SweepAxis::parse(s)).collect::<Result<_, _>>()?;
    if !args.algos.is_empty() {
        plan.algorithms = args.algos;
    }
    plan.seeds = parse_seeds(&args.seeds)?;
    plan.restarts = args.restarts;
    plan.outer_tol = args.outer_tol;
    plan.inner_tol = args.inner_tol;
    plan.max_outer_iters = args.max_iters;
    plan.timing = args.timing;
    plan.jobs = args.jobs;
    Ok(plan)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = build_plan(args).and_then(|plan| {
        let records = run_experiment(&plan)?;
        Ok((plan, records))
    });
    match result {
        Ok((plan, records)) => {
            eprintln!("{} runs written to {}", records.len(), plan.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
