//! Experiment harness: expands a base network configuration over sweep axes,
//! seeds and algorithms, runs every combination and writes CSV traces plus
//! summary tables.
//!
//! Output layout under the plan's directory:
//!
//! * `traces/p{point}_s{seed}_{algo}.csv`, one per run;
//! * `summary.csv`, one row per run;
//! * `aggregate.csv`, mean and standard error over seeds per grid point and
//!   algorithm.
//!
//! All file contents are a function of the plan alone unless timing is
//! switched on, in which case the `wall_ms` columns hold measured times.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hetnet_sca::driver::{run, Algorithm, DriverError, InitPolicy, RunSettings, SolveReport, TraceRow};
use hetnet_sca::network::{generate_problem, NetworkConfig, NetworkError, OneOrMany};
use rayon::prelude::*;
use serde_json::Value;
use thiserror::Error;

pub const TRACE_HEADER: [&str; 6] = ["iter", "objective_nats", "surrogate_nats", "step_frob", "wall_ms", "kkt_residual"];

pub const SUMMARY_HEADER: [&str; 15] = [
    "scenario",
    "algorithm",
    "K",
    "Q",
    "I",
    "M",
    "N",
    "d",
    "seed",
    "beta",
    "gamma",
    "final_sumrate_bits",
    "iters",
    "wall_ms",
    "mean_cluster_size",
];

pub const AGGREGATE_HEADER: [&str; 20] = [
    "point",
    "scenario",
    "algorithm",
    "K",
    "Q",
    "I",
    "M",
    "N",
    "d",
    "beta",
    "gamma",
    "seeds",
    "sumrate_bits_mean",
    "sumrate_bits_se",
    "iters_mean",
    "iters_se",
    "wall_ms_mean",
    "wall_ms_se",
    "cluster_size_mean",
    "cluster_size_se",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(#[from] NetworkError),
    #[error("invalid sweep `{axis}`: {message}")]
    Sweep { axis: String, message: String },
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("run failed (point {point}, seed {seed}, {algorithm}): {source}")]
    Solver { point: usize, seed: u64, algorithm: &'static str, source: DriverError },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    /// Process exit code: 1 for invalid input, 2 for solver or I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Sweep { .. } | CliError::Plan(_) => 1,
            CliError::Solver { .. } | CliError::Io { .. } => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        let source = io::Error::other(e.to_string());
        CliError::Io { path: PathBuf::new(), source }
    }
}

/// One sweep axis: a configuration field and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub field: String,
    pub values: Vec<Value>,
}

impl SweepAxis {
    /// Parses `field=v1,v2,...`. Each value is read as JSON when possible
    /// and as a bare string otherwise, so `scenario=IBC,COMP-FULL` and
    /// `weights=[1,2],[2,1]` both work.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let (field, rest) = text.split_once('=').ok_or_else(|| CliError::Sweep {
            axis: text.to_string(),
            message: "expected <field>=<v1,v2,...>".into(),
        })?;
        let field = field.trim().to_string();
        let values: Vec<Value> = split_top_level(rest)
            .into_iter()
            .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())))
            .collect();
        if field.is_empty() || values.is_empty() {
            return Err(CliError::Sweep { axis: text.to_string(), message: "empty field or value list".into() });
        }
        Ok(SweepAxis { field, values })
    }
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out.into_iter().filter(|v| !v.is_empty()).collect()
}

/// Parses `--seeds`: a single count `n` means seeds `0..n`; a comma list is
/// taken literally; `a..b` is a half-open range.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = |m: &str| CliError::Plan(format!("seeds `{text}`: {m}"));
    let text = text.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad("bad range start"))?;
        let b: u64 = b.trim().parse().map_err(|_| bad("bad range end"))?;
        (a..b).collect()
    } else if text.contains(',') {
        text.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|_| bad("not an integer")))
            .collect::<Result<_, _>>()?
    } else {
        let n: u64 = text.parse().map_err(|_| bad("not an integer"))?;
        (0..n).collect()
    };
    if seeds.is_empty() {
        return Err(bad("at least one seed is required"));
    }
    Ok(seeds)
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub base: NetworkConfig,
    pub sweeps: Vec<SweepAxis>,
    pub algorithms: Vec<Algorithm>,
    /// Starts per run; the best final objective is kept.
    pub restarts: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub max_outer_iters: usize,
    pub timing: bool,
    /// Worker threads; `None` lets rayon decide.
    pub jobs: Option<usize>,
}

impl ExperimentPlan {
    pub fn new(base: NetworkConfig, out_dir: impl Into<PathBuf>) -> Self {
        ExperimentPlan {
            base,
            sweeps: Vec::new(),
            algorithms: vec![Algorithm::Sca],
            restarts: 1,
            seeds: vec![0],
            out_dir: out_dir.into(),
            outer_tol: 1e-3,
            inner_tol: 1e-3,
            max_outer_iters: 2000,
            timing: false,
            jobs: None,
        }
    }

    /// Every combination of sweep values, in row-major order of the axes.
    /// Each configuration is validated.
    pub fn grid(&self) -> Result<Vec<NetworkConfig>, CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Plan("at least one seed is required".into()));
        }
        if self.algorithms.is_empty() {
            return Err(CliError::Plan("at least one algorithm is required".into()));
        }
        if self.restarts == 0 {
            return Err(CliError::Plan("restarts must be at least 1".into()));
        }
        let base = serde_json::to_value(&self.base).map_err(|e| CliError::Plan(e.to_string()))?;
        let mut points = vec![base];
        for axis in &self.sweeps {
            let mut next = Vec::with_capacity(points.len() * axis.values.len());
            for p in &points {
                for v in &axis.values {
                    let mut q = p.clone();
                    q[axis.field.as_str()] = v.clone();
                    next.push(q);
                }
            }
            points = next;
        }
        points
            .into_iter()
            .map(|p| {
                NetworkConfig::from_json(&p.to_string()).map_err(|e| match (&e, self.sweeps.is_empty()) {
                    (NetworkError::Parse(msg), false) => {
                        let axis = self.sweeps.iter().map(|a| a.field.as_str()).collect::<Vec<_>>().join(",");
                        CliError::Sweep { axis, message: msg.clone() }
                    }
                    _ => CliError::Config(e),
                })
            })
            .collect()
    }
}

/// Everything recorded about one run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub point: usize,
    pub seed: u64,
    pub config: NetworkConfig,
    pub algorithm: Algorithm,
    pub beta: f64,
    pub final_objective: f64,
    pub sum_rate_bits: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub mean_cluster_size: f64,
    pub trace: Vec<TraceRow>,
}

impl RunRecord {
    pub fn from_report(point: usize, seed: u64, config: &NetworkConfig, report: &SolveReport) -> Self {
        RunRecord {
            point,
            seed,
            config: config.clone(),
            algorithm: report.algorithm,
            beta: report.beta.first().copied().unwrap_or(0.0),
            final_objective: report.objective,
            sum_rate_bits: report.sum_rate() / std::f64::consts::LN_2,
            iterations: report.iterations,
            wall_ms: report.wall_ms,
            mean_cluster_size: report.mean_cluster_size(),
            trace: report.trace.clone(),
        }
    }

    pub fn trace_file_name(&self) -> String {
        let algo = match self.algorithm {
            Algorithm::Sca => "sca",
            Algorithm::InSca => "insca",
        };
        format!("p{}_s{}_{}.csv", self.point, self.seed, algo)
    }
}

fn settings_for(plan: &ExperimentPlan, cfg: &NetworkConfig, algorithm: Algorithm, restart: usize) -> RunSettings {
    let mut s = RunSettings::new(algorithm);
    if let Some(b) = cfg.beta {
        s = s.with_beta(b, cfg.num_cells);
    }
    s.outer_tol = plan.outer_tol;
    s.inner_tol = plan.inner_tol;
    s.max_outer_iters = plan.max_outer_iters;
    s.timing = plan.timing;
    s.init = InitPolicy::ScaledRandom;
    s.init_seed = restart as u64;
    s
}

/// Runs one grid point, seed and algorithm; keeps the best of the restarts
/// (earliest restart on ties).
pub fn run_single(
    plan: &ExperimentPlan,
    point: usize,
    cfg: &NetworkConfig,
    seed: u64,
    algorithm: Algorithm,
) -> Result<RunRecord, CliError> {
    let mut cfg = cfg.clone();
    cfg.rng_seed = seed;
    let problem = generate_problem(&cfg)?;
    let mut best: Option<SolveReport> = None;
    for restart in 0..plan.restarts {
        let settings = settings_for(plan, &cfg, algorithm, restart);
        let report = run(&problem, &settings).map_err(|source| CliError::Solver {
            point,
            seed,
            algorithm: algorithm.name(),
            source,
        })?;
        if best.as_ref().is_none_or(|b| report.objective > b.objective) {
            best = Some(report);
        }
    }
    let best = best.expect("at least one restart");
    Ok(RunRecord::from_report(point, seed, &cfg, &best))
}

/// Runs the whole plan and writes the report. On failure the completed runs
/// are still written before the first error (in plan order) is returned.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<Vec<RunRecord>, CliError> {
    let grid = plan.grid()?;
    let mut jobs = Vec::new();
    for (point, cfg) in grid.iter().enumerate() {
        for &seed in &plan.seeds {
            for &algo in &plan.algorithms {
                jobs.push((point, cfg, seed, algo));
            }
        }
    }
    let execute = || -> Vec<Result<RunRecord, CliError>> {
        jobs.par_iter().map(|&(point, cfg, seed, algo)| run_single(plan, point, cfg, seed, algo)).collect()
    };
    let results = match plan.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Plan(e.to_string()))?
            .install(execute),
        None => execute(),
    };
    let mut records = Vec::with_capacity(results.len());
    let mut first_error = None;
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    emit_report(&records, &plan.out_dir)?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(records),
    }
}

fn list<T: ToString + Copy>(v: &OneOrMany<T>) -> String {
    match v {
        OneOrMany::One(x) => x.to_string(),
        OneOrMany::Many(xs) => xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"),
    }
}

fn config_columns(cfg: &NetworkConfig) -> [String; 7] {
    [
        cfg.scenario.name().to_string(),
        cfg.num_cells.to_string(),
        list(&cfg.bs_per_cell),
        list(&cfg.users_per_cell),
        cfg.tx_antennas.to_string(),
        cfg.rx_antennas.to_string(),
        list(&cfg.streams),
    ]
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e.into() })?;
    w.write_record(TRACE_HEADER)?;
    for row in trace {
        w.write_record([
            row.iter.to_string(),
            row.objective.to_string(),
            row.surrogate.to_string(),
            row.step.to_string(),
            row.wall_ms.to_string(),
            row.kkt_residual.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_summary(path: &Path, records: &[RunRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e.into() })?;
    w.write_record(SUMMARY_HEADER)?;
    for r in records {
        let [scenario, k, q, i, m, n, d] = config_columns(&r.config);
        w.write_record([
            scenario,
            r.algorithm.name().to_string(),
            k,
            q,
            i,
            m,
            n,
            d,
            r.seed.to_string(),
            r.beta.to_string(),
            r.config.gamma.to_string(),
            r.sum_rate_bits.to_string(),
            r.iterations.to_string(),
            r.wall_ms.to_string(),
            r.mean_cluster_size.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

/// Sample mean and standard error `s / √n`, with `s` the sample standard
/// deviation. A single sample has standard error 0.
pub fn mean_and_standard_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn write_aggregate(path: &Path, records: &[RunRecord]) -> Result<(), CliError> {
    let mut groups: Vec<((usize, Algorithm), Vec<&RunRecord>)> = Vec::new();
    for r in records {
        let key = (r.point, r.algorithm);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e.into() })?;
    w.write_record(AGGREGATE_HEADER)?;
    for ((point, algo), g) in &groups {
        let stat = |f: fn(&RunRecord) -> f64| mean_and_standard_error(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (rate_m, rate_se) = stat(|r| r.sum_rate_bits);
        let (it_m, it_se) = stat(|r| r.iterations as f64);
        let (ms_m, ms_se) = stat(|r| r.wall_ms);
        let (cl_m, cl_se) = stat(|r| r.mean_cluster_size);
        let first = g[0];
        let [scenario, k, q, i, m, n, d] = config_columns(&first.config);
        w.write_record([
            point.to_string(),
            scenario,
            algo.name().to_string(),
            k,
            q,
            i,
            m,
            n,
            d,
            first.beta.to_string(),
            first.config.gamma.to_string(),
            g.len().to_string(),
            rate_m.to_string(),
            rate_se.to_string(),
            it_m.to_string(),
            it_se.to_string(),
            ms_m.to_string(),
            ms_se.to_string(),
            cl_m.to_string(),
            cl_se.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `summary.csv`, `aggregate.csv` and one trace per record under
/// `dir`. An empty record list gives header-only tables.
pub fn emit_report(records: &[RunRecord], dir: &Path) -> Result<(), CliError> {
    let traces = dir.join("traces");
    fs::create_dir_all(&traces).map_err(io_err(&traces))?;
    for r in records {
        write_trace(&traces.join(r.trace_file_name()), &r.trace)?;
    }
    write_summary(&dir.join("summary.csv"), records)?;
    write_aggregate(&dir.join("aggregate.csv"), records)
}
