//! Joint transmission inside a cell with one budget per BS. The cell's
//! bound is maximized by cyclic updates of the per-BS blocks `V^m`,
//! ascending BS index. Each block problem is a power-constrained quadratic
//! in `J[m,m]`, with one sparsity group per user when `γ > 0`.

use crate::linalg::{hermitian_eigen, CMatrix};
use crate::network::Problem;
use crate::surrogate::{eval_cell_bound, SurrogateModel};

use super::bisection::{BisectionOutcome, BisectionSpec};
use super::quadratic::{solve_groups, Group};
use super::{CellSolution, SolverError};

/// Relative slack when asserting that a block update does not lower the
/// cell's bound.
const BLOCK_ASCENT_SLACK: f64 = 1e-10;

/// Outcome of one block update.
#[derive(Debug, Clone)]
pub struct BlockUpdate {
    pub bisection: Option<BisectionOutcome>,
    pub kkt_residual: f64,
}

/// The effective linear term of BS `m`'s block for one user:
/// `S[m] − Σ_{p≠m} J[m,p] V^p`.
pub fn block_linear_term(problem: &Problem, model: &SurrogateModel, cell: usize, m: usize, user: usize, v_user: &CMatrix) -> CMatrix {
    let topo = problem.topology();
    let rows = topo.bs_rows(m);
    let j = &model.curvature[cell];
    let j_row = j.rows(rows.start, rows.len());
    let s = model.linear[user].rows(rows.start, rows.len());
    let own = j.view((rows.start, rows.start), (rows.len(), rows.len())) * v_user.rows(rows.start, rows.len());
    s - j_row * v_user + own
}

/// Updates the BS-`m` blocks of every user in `cell` in place. `v_cell`
/// holds the stacked precoders of the cell's users in order. Users outside
/// the BS's serving set keep a zero block.
pub fn comp_block_update(
    problem: &Problem,
    model: &SurrogateModel,
    cell: usize,
    m: usize,
    v_cell: &mut [CMatrix],
    spec: &BisectionSpec,
) -> Result<BlockUpdate, SolverError> {
    let topo = problem.topology();
    let layout = topo.cell(cell);
    let rows = topo.bs_rows(m);
    let a = model.curvature[cell].view((rows.start, rows.start), (rows.len(), rows.len())).into_owned();

    let mut served = Vec::new();
    let mut linear = Vec::new();
    let mut gammas = Vec::new();
    for (i, u) in layout.users.clone().enumerate() {
        if problem.serving.serves(cell, m, topo.user(u).local) {
            served.push(i);
            linear.push(block_linear_term(problem, model, cell, m, u, &v_cell[i]));
            gammas.push(problem.penalty.get(u, m));
        } else {
            let d = v_cell[i].ncols();
            v_cell[i].rows_mut(rows.start, rows.len()).copy_from(&CMatrix::zeros(rows.len(), d));
        }
    }
    if served.is_empty() {
        return Ok(BlockUpdate { bisection: None, kkt_residual: 0.0 });
    }

    let eigen = hermitian_eigen(&a);
    let groups: Vec<Group<'_>> = linear.iter().zip(&gammas).map(|(b, g)| Group::new(&eigen, b, *g)).collect();
    let mats = vec![&a; linear.len()];
    let lins: Vec<&CMatrix> = linear.iter().collect();
    let budget = problem.channels.bs_budget[cell][m];
    let sol = solve_groups(&groups, &mats, &lins, budget, spec)
        .map_err(|source| SolverError::Bisection { cell, bs: Some(m), source })?;
    for (k, &i) in served.iter().enumerate() {
        v_cell[i].rows_mut(rows.start, rows.len()).copy_from(&sol.blocks[k]);
    }
    Ok(BlockUpdate { bisection: Some(sol.bisection), kkt_residual: sol.kkt_residual })
}

fn cyclic_rounds(
    problem: &Problem,
    model: &SurrogateModel,
    cell: usize,
    v_init: &[CMatrix],
    max_rounds: usize,
    inner_tol: f64,
    spec: &BisectionSpec,
) -> Result<CellSolution, SolverError> {
    let num_bs = problem.topology().cell(cell).num_bs;
    let mut v: Vec<CMatrix> = v_init.to_vec();
    let mut value = eval_cell_bound(problem, model, cell, &v);
    let mut bisections = Vec::new();
    let mut kkt_residual: f64 = 0.0;
    let mut block_updates = 0;
    let mut rounds = 0;
    while rounds < max_rounds {
        let round_start = value;
        let mut round_kkt: f64 = 0.0;
        for m in 0..num_bs {
            let upd = comp_block_update(problem, model, cell, m, &mut v, spec)?;
            block_updates += 1;
            bisections.extend(upd.bisection);
            round_kkt = round_kkt.max(upd.kkt_residual);
            let next = eval_cell_bound(problem, model, cell, &v);
            if next < value - BLOCK_ASCENT_SLACK * value.abs().max(1.0) {
                return Err(SolverError::InnerDescent { cell, bs: m, before: value, after: next });
            }
            value = next;
        }
        kkt_residual = round_kkt;
        rounds += 1;
        // a single block is solved exactly by one update
        if num_bs == 1 {
            break;
        }
        if value - round_start <= inner_tol * round_start.abs().max(1e-12) {
            break;
        }
    }
    Ok(CellSolution { blocks: v, bisections, kkt_residual, block_updates, inner_rounds: rounds })
}

/// Cap on full rounds in [`comp_exact_solve`].
pub const MAX_INNER_ROUNDS: usize = 100_000;

/// Cycles block updates until one full round raises the cell's bound by at
/// most `inner_tol` relative.
pub fn comp_exact_solve(
    problem: &Problem,
    model: &SurrogateModel,
    cell: usize,
    v_init: &[CMatrix],
    inner_tol: f64,
    spec: &BisectionSpec,
) -> Result<CellSolution, SolverError> {
    cyclic_rounds(problem, model, cell, v_init, MAX_INNER_ROUNDS, inner_tol, spec)
}

/// Exactly one block update per BS in ascending order.
pub fn comp_single_pass(
    problem: &Problem,
    model: &SurrogateModel,
    cell: usize,
    v_init: &[CMatrix],
    spec: &BisectionSpec,
) -> Result<CellSolution, SolverError> {
    cyclic_rounds(problem, model, cell, v_init, 1, f64::INFINITY, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate_problem, NetworkConfig, Scenario};
    use crate::rate::PrecoderSet;
    use crate::solvers::ibc::ibc_update;
    use crate::surrogate::build_surrogate;

    fn random_point(problem: &Problem, seed: u64) -> PrecoderSet {
        crate::driver::initialize(problem, crate::driver::InitPolicy::ScaledRandom, seed).unwrap()
    }

    #[test]
    fn single_bs_matches_ibc() {
        let mut cfg = NetworkConfig::new(2, 1, 2, 3, 2);
        cfg.rng_seed = 8;
        let mut problem = generate_problem(&cfg).unwrap();
        let v = random_point(&problem, 1);
        let spec = BisectionSpec::default();
        for cell in 0..2 {
            problem.scenario = Scenario::Ibc;
            let model = build_surrogate(&problem, &v, &[0.0, 0.0]).unwrap();
            let ibc = ibc_update(&problem, &model, cell, &spec).unwrap();
            problem.scenario = Scenario::CompFull;
            let init: Vec<CMatrix> = problem.topology().cell(cell).users.clone().map(|u| v.user(u).clone()).collect();
            let comp = comp_exact_solve(&problem, &model, cell, &init, 1e-8, &spec).unwrap();
            assert_eq!(comp.block_updates, 1);
            for (a, b) in ibc.blocks.iter().zip(&comp.blocks) {
                assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
            }
        }
    }

    #[test]
    fn large_gamma_zeroes_everything() {
        let mut cfg = NetworkConfig::new(1, 2, 2, 2, 1);
        cfg.rng_seed = 4;
        cfg.scenario = Scenario::CompSparse;
        cfg.gamma = 1e9;
        let problem = generate_problem(&cfg).unwrap();
        let v = random_point(&problem, 2);
        let model = build_surrogate(&problem, &v, &[1e-3]).unwrap();
        let mut cell_v: Vec<CMatrix> = (0..2).map(|u| v.user(u).clone()).collect();
        for m in 0..2 {
            comp_block_update(&problem, &model, 0, m, &mut cell_v, &BisectionSpec::default()).unwrap();
        }
        assert!(cell_v.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn block_stationarity() {
        let mut cfg = NetworkConfig::new(1, 2, 2, 2, 1);
        cfg.rng_seed = 12;
        let problem = generate_problem(&cfg).unwrap();
        let v = random_point(&problem, 3);
        let model = build_surrogate(&problem, &v, &[0.0]).unwrap();
        let mut cell_v: Vec<CMatrix> = (0..2).map(|u| v.user(u).clone()).collect();
        let upd = comp_block_update(&problem, &model, 0, 1, &mut cell_v, &BisectionSpec::default()).unwrap();
        let b = upd.bisection.unwrap();
        let rows = problem.topology().bs_rows(1);
        let jmm = model.curvature[0].view((rows.start, rows.start), (2, 2)).into_owned();
        for (i, x) in cell_v.iter().enumerate() {
            let lin = block_linear_term(&problem, &model, 0, 1, i, x);
            let blk = x.rows(rows.start, 2).into_owned();
            let r = (&jmm + CMatrix::identity(2, 2).scale(b.lambda)) * blk - &lin;
            assert!(r.norm() <= 1e-7 * lin.norm().max(1.0), "residual {}", r.norm());
        }
    }
}
