//! Outer iterations of SCA and inexact SCA (In-SCA).
//!
//! Each iteration builds the bound at the current point, maximizes it cell
//! by cell and moves to the maximizer. SCA maximizes each cell's bound to
//! the inner tolerance; In-SCA does a single pass of block updates, which is
//! enough for the sufficient-ascent condition
//! `h(V⁺; V) − s(V⁺) − u(V) ≥ (min β / 2) ‖V⁺ − V‖²`.
//! Both conditions are checked every iteration and a violation aborts the
//! run with [`DriverError::AscentViolation`].

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{c64, svd, CMatrix};
use crate::network::{Problem, Scenario};
use crate::rate::{evaluate, objective, PrecoderSet, RateError};
use crate::solvers::{solve_cell, zf_basis, BisectionOutcome, BisectionSpec, InnerMode, SolverError, ZfBasis};
use crate::surrogate::{build_surrogate, eval_total_bound};

/// Absolute slack of the ascent checks.
pub const ASCENT_SLACK: f64 = 1e-9;
/// Proximal weight used by In-SCA when none is given.
pub const DEFAULT_INSCA_BETA: f64 = 1e-3;
/// Scale of the ZERO-PLUS-EPSILON start.
pub const INIT_EPSILON: f64 = 1e-3;
/// Fraction of each budget used by the scaled starts.
pub const INIT_POWER_FRACTION: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "SCA")]
    Sca,
    #[serde(rename = "IN-SCA")]
    InSca,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sca => "SCA",
            Algorithm::InSca => "IN-SCA",
        }
    }

    pub fn default_beta(self) -> f64 {
        match self {
            Algorithm::Sca => 0.0,
            Algorithm::InSca => DEFAULT_INSCA_BETA,
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sca" => Ok(Algorithm::Sca),
            "insca" | "in-sca" => Ok(Algorithm::InSca),
            other => Err(format!("unknown algorithm `{other}` (expected sca or insca)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitPolicy {
    #[serde(rename = "ZERO-PLUS-EPSILON")]
    ZeroPlusEpsilon,
    #[serde(rename = "SCALED-RANDOM")]
    ScaledRandom,
    #[serde(rename = "SCALED-MRT")]
    ScaledMrt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub algorithm: Algorithm,
    /// Proximal weight per cell; `None` uses the algorithm's default.
    pub beta: Option<Vec<f64>>,
    /// Relative objective change that ends the run.
    pub outer_tol: f64,
    /// Relative round gain that ends the inner loop of SCA in ComP cells.
    pub inner_tol: f64,
    pub max_outer_iters: usize,
    pub init: InitPolicy,
    pub init_seed: u64,
    pub record_trace: bool,
    /// Keep every iterate `V(t)` in the report.
    pub keep_iterates: bool,
    /// Record wall-clock times; otherwise times are reported as 0.
    pub timing: bool,
    /// Directions sampled for the final stationarity residual; 0 skips it.
    pub stationarity_directions: usize,
    pub bisection: BisectionSpec,
}

impl RunSettings {
    pub fn new(algorithm: Algorithm) -> Self {
        RunSettings {
            algorithm,
            beta: None,
            outer_tol: 1e-3,
            inner_tol: 1e-3,
            max_outer_iters: 2000,
            init: InitPolicy::ScaledRandom,
            init_seed: 0,
            record_trace: true,
            keep_iterates: false,
            timing: false,
            stationarity_directions: 0,
            bisection: BisectionSpec::default(),
        }
    }

    /// Uses the same proximal weight in every cell.
    pub fn with_beta(mut self, beta: f64, num_cells: usize) -> Self {
        self.beta = Some(vec![beta; num_cells]);
        self
    }

    pub fn betas(&self, num_cells: usize) -> Vec<f64> {
        self.beta.clone().unwrap_or_else(|| vec![self.algorithm.default_beta(); num_cells])
    }
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("ascent violated at iteration {iter} ({check}): margin {margin:.3e}")]
    AscentViolation { iter: usize, check: &'static str, margin: f64 },
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}

/// One outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    /// `u(V(t))`, nats.
    pub objective: f64,
    /// `h(V(t); V(t−1)) − s(V(t))`, nats.
    pub surrogate: f64,
    /// `‖V(t) − V(t−1)‖_F`.
    pub step: f64,
    pub wall_ms: f64,
    /// Largest first-order residual of the subproblems solved this iteration.
    pub kkt_residual: f64,
    /// Block updates performed this iteration.
    pub block_updates: usize,
}

/// Summary of all multiplier searches in a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BisectionStats {
    pub calls: usize,
    pub active_calls: usize,
    /// Largest `|power − P̄| / P̄` over calls with `λ > 0`.
    pub max_active_gap: f64,
    /// Largest `power(0) / P̄` over calls with `λ = 0`.
    pub max_inactive_ratio: f64,
}

impl BisectionStats {
    fn record(&mut self, b: &BisectionOutcome) {
        self.calls += 1;
        if b.lambda > 0.0 {
            self.active_calls += 1;
            self.max_active_gap = self.max_active_gap.max(b.relative_gap());
        } else {
            self.max_inactive_ratio = self.max_inactive_ratio.max(b.power / b.budget);
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub algorithm: Algorithm,
    pub beta: Vec<f64>,
    pub initial: PrecoderSet,
    pub initial_objective: f64,
    pub trace: Vec<TraceRow>,
    /// `V(1), V(2), …` when `keep_iterates` is set.
    pub iterates: Vec<PrecoderSet>,
    pub precoders: PrecoderSet,
    pub objective: f64,
    pub rates: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stationarity: Option<f64>,
    /// Number of BSs with a nonzero block, per user.
    pub cluster_sizes: Vec<usize>,
    pub total_block_updates: usize,
    pub bisection: BisectionStats,
    pub wall_ms: f64,
}

impl SolveReport {
    pub fn sum_rate(&self) -> f64 {
        self.rates.iter().sum()
    }

    pub fn mean_cluster_size(&self) -> f64 {
        if self.cluster_sizes.is_empty() {
            return 0.0;
        }
        self.cluster_sizes.iter().sum::<usize>() as f64 / self.cluster_sizes.len() as f64
    }
}

/// Zero-forcing bases of every cell, or `None` outside the ZF scenario.
pub fn zf_bases(problem: &Problem) -> Result<Option<Vec<ZfBasis>>, SolverError> {
    if problem.scenario != Scenario::IbcZf {
        return Ok(None);
    }
    (0..problem.topology().num_cells()).map(|k| zf_basis(&problem.channels, k)).collect::<Result<Vec<_>, _>>().map(Some)
}

/// Projects onto the structural constraints: zero-forcing subspaces and
/// serving sets.
fn project_structure(problem: &Problem, bases: &Option<Vec<ZfBasis>>, v: &mut PrecoderSet) {
    let topo = problem.topology().clone();
    if let Some(bases) = bases {
        for (k, basis) in bases.iter().enumerate() {
            for (i, u) in topo.cell(k).users.clone().enumerate() {
                let r = &basis.bases[i];
                let projected = r * (r.adjoint() * v.user(u));
                *v.user_mut(u) = projected;
            }
        }
    }
    if problem.scenario == Scenario::CompPartialFixed {
        for u in 0..topo.num_users() {
            let info = topo.user(u);
            for q in 0..topo.cell(info.cell).num_bs {
                if !problem.serving.serves(info.cell, q, info.local) {
                    let zero = CMatrix::zeros(topo.tx_antennas, info.streams);
                    v.set_bs_block(&topo, u, q, &zero);
                }
            }
        }
    }
}

/// Rescales every power group (cell or BS, per scenario) so its power is
/// `fraction[g] · budget`. Groups with zero power are left alone.
pub fn scale_to_budgets(problem: &Problem, v: &mut PrecoderSet, fraction: impl Fn(usize, usize) -> f64) {
    let topo = problem.topology().clone();
    let ch = &problem.channels;
    for k in 0..topo.num_cells() {
        if problem.scenario.per_bs_power() {
            for q in 0..topo.cell(k).num_bs {
                let p = v.bs_power(&topo, k, q);
                if p > 0.0 {
                    let s = (fraction(k, q) * ch.bs_budget[k][q] / p).sqrt();
                    let rows = topo.bs_rows(q);
                    for u in topo.cell(k).users.clone() {
                        v.user_mut(u).rows_mut(rows.start, rows.len()).scale_mut(s);
                    }
                }
            }
        } else {
            let p = v.cell_power(&topo, k);
            if p > 0.0 {
                let s = (fraction(k, 0) * ch.cell_budget[k] / p).sqrt();
                for u in topo.cell(k).users.clone() {
                    v.user_mut(u).scale_mut(s);
                }
            }
        }
    }
}

fn mrt_directions(problem: &Problem) -> Result<PrecoderSet, SolverError> {
    let topo = problem.topology();
    let mut v = PrecoderSet::zeros(topo);
    for u in 0..topo.num_users() {
        let d = topo.user(u).streams;
        let dec = svd(problem.channels.own_link(u))?;
        let dim = topo.cell_dim(topo.user(u).cell);
        let take = d.min(dec.right.ncols());
        let mut b = CMatrix::zeros(dim, d);
        b.columns_mut(0, take).copy_from(&dec.right.columns(0, take));
        *v.user_mut(u) = b;
    }
    Ok(v)
}

/// A feasible starting point.
///
/// * `ZeroPlusEpsilon`: MRT directions with `‖V‖ = ε √budget` per power group.
/// * `ScaledRandom`: complex Gaussian blocks drawn from `seed`.
/// * `ScaledMrt`: dominant right singular vectors of each user's own channel.
///
/// Directions are projected onto the zero-forcing subspaces or serving sets
/// first; the scaled policies then use `(1 − 1e-6)` of every budget.
pub fn initialize(problem: &Problem, policy: InitPolicy, seed: u64) -> Result<PrecoderSet, SolverError> {
    let bases = zf_bases(problem)?;
    let topo = problem.topology();
    let mut v = match policy {
        InitPolicy::ScaledRandom => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let blocks = (0..topo.num_users())
                .map(|u| {
                    let info = topo.user(u);
                    CMatrix::from_fn(topo.cell_dim(info.cell), info.streams, |_, _| {
                        c64(rng.sample(StandardNormal), rng.sample(StandardNormal))
                    })
                })
                .collect();
            PrecoderSet::from_blocks(blocks)
        }
        InitPolicy::ScaledMrt | InitPolicy::ZeroPlusEpsilon => mrt_directions(problem)?,
    };
    project_structure(problem, &bases, &mut v);
    let fraction = match policy {
        InitPolicy::ZeroPlusEpsilon => INIT_EPSILON * INIT_EPSILON,
        _ => INIT_POWER_FRACTION,
    };
    scale_to_budgets(problem, &mut v, |_, _| fraction);
    Ok(v)
}

/// A feasible point with a random fraction of each budget in use; used for
/// restarts and for sampling feasible directions.
pub fn random_feasible_point(problem: &Problem, seed: u64) -> Result<PrecoderSet, SolverError> {
    let mut v = initialize(problem, InitPolicy::ScaledRandom, seed)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let topo = problem.topology();
    let fractions: Vec<Vec<f64>> = topo
        .cells()
        .iter()
        .map(|c| (0..c.num_bs.max(1)).map(|_| 1.0 - rng.random::<f64>()).collect())
        .collect();
    scale_to_budgets(problem, &mut v, |_, _| 1.0);
    scale_to_budgets(problem, &mut v, |k, q| fractions[k][q] * INIT_POWER_FRACTION);
    Ok(v)
}

/// Number of BSs with a nonzero block, per user.
pub fn cluster_sizes(problem: &Problem, v: &PrecoderSet) -> Vec<usize> {
    let topo = problem.topology();
    (0..topo.num_users())
        .map(|u| {
            let cell = topo.user(u).cell;
            (0..topo.cell(cell).num_bs).filter(|&q| v.bs_block(topo, u, q).norm() > 0.0).count()
        })
        .collect()
}

/// Runs from the point chosen by `settings.init`.
pub fn run(problem: &Problem, settings: &RunSettings) -> Result<SolveReport, DriverError> {
    let v0 = initialize(problem, settings.init, settings.init_seed)?;
    run_from(problem, settings, v0)
}

/// Runs from a given feasible point.
pub fn run_from(problem: &Problem, settings: &RunSettings, v0: PrecoderSet) -> Result<SolveReport, DriverError> {
    let topo = problem.topology();
    let num_cells = topo.num_cells();
    let beta = settings.betas(num_cells);
    if beta.len() != num_cells || beta.iter().any(|b| !(*b >= 0.0)) {
        return Err(DriverError::InvalidSettings(format!("need {num_cells} nonnegative beta values")));
    }
    if !(settings.outer_tol > 0.0) || !(settings.inner_tol > 0.0) {
        return Err(DriverError::InvalidSettings("tolerances must be positive".into()));
    }
    if settings.algorithm == Algorithm::InSca && problem.scenario.per_bs_power() && beta.iter().any(|b| *b <= 0.0) {
        return Err(DriverError::InvalidSettings("IN-SCA with joint transmission needs beta > 0 in every cell".into()));
    }
    v0.check_shapes(topo)?;
    let eta = 0.5 * beta.iter().copied().fold(f64::INFINITY, f64::min);
    let mode = match settings.algorithm {
        Algorithm::Sca => InnerMode::Exact { tol: settings.inner_tol },
        Algorithm::InSca => InnerMode::SinglePass,
    };
    let bases = zf_bases(problem)?;
    // the clock is only read when asked for; it is unavailable on some targets
    let now = || settings.timing.then(Instant::now);
    let elapsed_ms = |t: &Option<Instant>| t.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);
    let start = now();

    let initial_objective = objective(problem, &v0)?;
    let mut v = v0.clone();
    let mut u_prev = initial_objective;
    let mut trace = Vec::new();
    let mut iterates = Vec::new();
    let mut stats = BisectionStats::default();
    let mut total_block_updates = 0;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=settings.max_outer_iters {
        let iter_start = now();
        let model = build_surrogate(problem, &v, &beta)?;
        let solutions = crate::par_map(num_cells, |k| {
            let basis = bases.as_ref().map(|b| &b[k]);
            solve_cell(problem, &model, k, mode, basis, &settings.bisection)
        });
        let mut next = v.clone();
        let mut kkt: f64 = 0.0;
        let mut block_updates = 0;
        for (k, sol) in solutions.into_iter().enumerate() {
            let sol = sol?;
            for (u, block) in topo.cell(k).users.clone().zip(sol.blocks) {
                *next.user_mut(u) = block;
            }
            for b in &sol.bisections {
                stats.record(b);
            }
            kkt = kkt.max(sol.kkt_residual);
            block_updates += sol.block_updates;
        }
        total_block_updates += block_updates;

        let surrogate = eval_total_bound(problem, &model, &next);
        let u_next = objective(problem, &next)?;
        let step = next.distance(&v);
        iterations = iter;

        let ascent = u_next - u_prev;
        if ascent < -ASCENT_SLACK {
            return Err(DriverError::AscentViolation { iter, check: "objective", margin: ascent });
        }
        if settings.algorithm == Algorithm::InSca {
            let margin = surrogate - u_prev - eta * step * step;
            if margin < -ASCENT_SLACK {
                return Err(DriverError::AscentViolation { iter, check: "sufficient ascent", margin });
            }
        }

        if settings.record_trace {
            trace.push(TraceRow {
                iter,
                objective: u_next,
                surrogate,
                step,
                wall_ms: elapsed_ms(&iter_start),
                kkt_residual: kkt,
                block_updates,
            });
        }
        if settings.keep_iterates {
            iterates.push(next.clone());
        }
        let rel = (u_next - u_prev).abs() / u_prev.abs().max(1e-12);
        v = next;
        u_prev = u_next;
        if rel <= settings.outer_tol {
            converged = true;
            break;
        }
    }

    let eval = evaluate(problem, &v)?;
    let stationarity = if settings.stationarity_directions > 0 {
        Some(stationarity_residual(problem, &v, settings.stationarity_directions, settings.init_seed)?)
    } else {
        None
    };
    Ok(SolveReport {
        algorithm: settings.algorithm,
        beta,
        initial: v0,
        initial_objective,
        trace,
        iterates,
        cluster_sizes: cluster_sizes(problem, &v),
        precoders: v,
        objective: eval.objective(),
        rates: eval.rates(),
        iterations,
        converged,
        stationarity,
        total_block_updates,
        bisection: stats,
        wall_ms: elapsed_ms(&start),
    })
}

/// Largest one-sided directional derivative of `u` at `v` over
/// `num_directions` unit directions toward random feasible points, divided
/// by `max(1, |u(v)|)` and floored at 0. Each derivative uses the
/// second-order one-sided difference `(−3u(0) + 4u(r) − u(2r)) / 2r`, which
/// stays inside the feasible set and evaluates the penalty directly.
pub fn stationarity_residual(problem: &Problem, v: &PrecoderSet, num_directions: usize, seed: u64) -> Result<f64, DriverError> {
    let u0 = objective(problem, v)?;
    let base_r = 1e-5 * v.norm_squared().sqrt().max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..num_directions {
        let target = random_feasible_point(problem, seed.wrapping_mul(1_000_003).wrapping_add(i as u64 + 1))?;
        let diff = target.sub(v);
        let len = diff.norm_squared().sqrt();
        if len == 0.0 {
            continue;
        }
        let dir = diff.scaled(1.0 / len);
        let r = base_r.min(0.5 * len);
        let u1 = objective(problem, &v.axpy(r, &dir))?;
        let u2 = objective(problem, &v.axpy(2.0 * r, &dir))?;
        let deriv = (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * r);
        worst = worst.max(deriv);
    }
    Ok(worst / u0.abs().max(1.0))
}
