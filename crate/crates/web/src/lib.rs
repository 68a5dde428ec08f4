//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every exported function takes plain values, runs the solver
//! synchronously and returns a JSON string for the page to draw. The `*_json`
//! functions hold the logic and are callable natively as well.

use hetnet_sca::driver::{random_feasible_point, run, run_from, Algorithm, DriverError, RunSettings, SolveReport};
use hetnet_sca::network::{generate_problem, NetworkConfig, NetworkError, OneOrMany, Problem, Scenario};
use hetnet_sca::rate::objective;
use serde::Serialize;
use thiserror::Error;
use wasm_bindgen::prelude::*;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Config(#[from] NetworkError),
    #[error(transparent)]
    Solver(#[from] DriverError),
    #[error("{0}")]
    Input(String),
}

impl From<DemoError> for JsValue {
    fn from(e: DemoError) -> Self {
        JsValue::from_str(&e.to_string())
    }
}

#[derive(Serialize)]
struct Trace {
    algorithm: &'static str,
    objective: Vec<f64>,
    step: Vec<f64>,
    cumulative_block_updates: Vec<usize>,
    sum_rate_bits: f64,
    iterations: usize,
    converged: bool,
}

impl Trace {
    fn from_report(r: &SolveReport) -> Self {
        let mut total = 0;
        Trace {
            algorithm: r.algorithm.name(),
            objective: std::iter::once(r.initial_objective).chain(r.trace.iter().map(|t| t.objective)).collect(),
            step: r.trace.iter().map(|t| t.step).collect(),
            cumulative_block_updates: std::iter::once(0)
                .chain(r.trace.iter().map(|t| {
                    total += t.block_updates;
                    total
                }))
                .collect(),
            sum_rate_bits: r.sum_rate() / std::f64::consts::LN_2,
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

fn settings(algorithm: Algorithm, beta: Option<f64>, num_cells: usize, max_iters: usize, tol: f64) -> RunSettings {
    let mut s = RunSettings::new(algorithm);
    if let Some(b) = beta {
        s = s.with_beta(b, num_cells);
    }
    s.max_outer_iters = max_iters.max(1);
    s.outer_tol = tol;
    s
}

/// Runs SCA and In-SCA from the same start on the network described by
/// `config_json` and returns both objective traces.
pub fn convergence_json(config_json: &str, max_iters: usize, tol: f64) -> Result<String, DemoError> {
    let cfg = NetworkConfig::from_json(config_json)?;
    let problem = generate_problem(&cfg)?;
    let mut traces = Vec::new();
    for algo in [Algorithm::Sca, Algorithm::InSca] {
        let s = settings(algo, cfg.beta, cfg.num_cells, max_iters, tol);
        traces.push(Trace::from_report(&run(&problem, &s)?));
    }
    Ok(serde_json::to_string(&traces).expect("trace serializes"))
}

#[derive(Serialize)]
struct SweepPoint {
    gamma: f64,
    mean_cluster_size: f64,
    sum_rate_bits: f64,
    cluster_sizes: Vec<usize>,
}

/// Solves the sparse joint-transmission problem once per value in
/// `gammas` (comma separated) and reports cluster sizes and sum rates.
pub fn cluster_sweep_json(config_json: &str, gammas: &str) -> Result<String, DemoError> {
    let mut cfg = NetworkConfig::from_json(config_json)?;
    cfg.scenario = Scenario::CompSparse;
    let gammas: Vec<f64> = gammas
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|_| DemoError::Input(format!("bad gamma `{s}`"))))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for gamma in gammas {
        cfg.gamma = gamma;
        cfg.validate()?;
        let problem = generate_problem(&cfg)?;
        let s = settings(Algorithm::InSca, cfg.beta, cfg.num_cells, 2000, 1e-5);
        let r = run(&problem, &s)?;
        out.push(SweepPoint {
            gamma,
            mean_cluster_size: r.mean_cluster_size(),
            sum_rate_bits: r.sum_rate() / std::f64::consts::LN_2,
            cluster_sizes: r.cluster_sizes.clone(),
        });
    }
    Ok(serde_json::to_string(&out).expect("sweep serializes"))
}

#[derive(Serialize)]
struct Landscape {
    budgets: [f64; 2],
    steps: usize,
    /// Row-major sum rate in bits, `values[a * steps + b]` at powers
    /// `(a, b) / (steps − 1)` of the budgets.
    values: Vec<f64>,
    grid_best: [f64; 3],
    /// Transmit powers of the two links along the SCA run.
    path: Vec<[f64; 2]>,
    final_bits: f64,
}

fn scalar_pair(seed: u64, power_db: f64) -> Result<Problem, DemoError> {
    let mut cfg = NetworkConfig::new(2, 1, 1, 1, 1);
    cfg.scenario = Scenario::Ibc;
    cfg.rng_seed = seed;
    cfg.total_cell_power_db = Some(OneOrMany::One(power_db));
    Ok(generate_problem(&cfg)?)
}

/// Sum rate of a two-link scalar interference channel over a power grid,
/// with the path of an SCA run from a random start drawn on top.
pub fn scalar_landscape_json(seed: u64, power_db: f64, steps: usize, start_seed: u64) -> Result<String, DemoError> {
    if !(2..=400).contains(&steps) {
        return Err(DemoError::Input("steps must be in 2..=400".into()));
    }
    let problem = scalar_pair(seed, power_db)?;
    let ch = &problem.channels;
    let budgets = [ch.cell_budget[0], ch.cell_budget[1]];
    let gain = |u: usize, l: usize| ch.link(u, l)[(0, 0)].norm_sqr();
    let bits = |p: [f64; 2]| -> f64 {
        (0..2)
            .map(|u| (1.0 + gain(u, u) * p[u] / (ch.noise_power[u] + gain(u, 1 - u) * p[1 - u])).log2())
            .sum()
    };
    let mut values = Vec::with_capacity(steps * steps);
    let mut grid_best = [0.0, 0.0, f64::NEG_INFINITY];
    for a in 0..steps {
        for b in 0..steps {
            let p = [budgets[0] * a as f64 / (steps - 1) as f64, budgets[1] * b as f64 / (steps - 1) as f64];
            let v = bits(p);
            if v > grid_best[2] {
                grid_best = [p[0], p[1], v];
            }
            values.push(v);
        }
    }
    let v0 = random_feasible_point(&problem, start_seed).map_err(DriverError::from)?;
    let mut s = settings(Algorithm::Sca, None, 2, 500, 1e-9);
    s.keep_iterates = true;
    let report = run_from(&problem, &s, v0)?;
    let path = std::iter::once(&report.initial)
        .chain(&report.iterates)
        .map(|v| [v.user(0).norm_squared(), v.user(1).norm_squared()])
        .collect();
    let final_bits = objective(&problem, &report.precoders).map_err(DriverError::from)? / std::f64::consts::LN_2;
    let out = Landscape { budgets, steps, values, grid_best, path, final_bits };
    Ok(serde_json::to_string(&out).expect("landscape serializes"))
}

#[wasm_bindgen]
pub fn convergence_trace(config_json: &str, max_iters: usize, tol: f64) -> Result<String, JsValue> {
    Ok(convergence_json(config_json, max_iters, tol)?)
}

#[wasm_bindgen]
pub fn cluster_sweep(config_json: &str, gammas: &str) -> Result<String, JsValue> {
    Ok(cluster_sweep_json(config_json, gammas)?)
}

#[wasm_bindgen]
pub fn scalar_ic_landscape(seed: u32, power_db: f64, steps: usize, start_seed: u32) -> Result<String, JsValue> {
    Ok(scalar_landscape_json(seed as u64, power_db, steps, start_seed as u64)?)
}

/// A starting configuration for the page's editor.
#[wasm_bindgen]
pub fn default_config() -> String {
    let mut cfg = NetworkConfig::new(2, 3, 4, 2, 1);
    cfg.scenario = Scenario::CompFull;
    cfg.rng_seed = 3;
    cfg.to_json()
}
