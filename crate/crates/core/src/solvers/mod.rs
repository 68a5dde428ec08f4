//! Per-cell solvers for one surrogate maximization step.

pub mod bisection;
pub mod comp;
pub mod ibc;
pub mod quadratic;

use thiserror::Error;

use crate::linalg::{CMatrix, LinalgError};
use crate::network::{Problem, Scenario};
use crate::surrogate::SurrogateModel;

pub use bisection::{bisect_multiplier, BisectionError, BisectionOutcome, BisectionSpec};
pub use comp::{comp_block_update, comp_exact_solve, comp_single_pass};
pub use ibc::{ibc_update, zf_basis, zf_update, ZfBasis};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("multiplier search failed in cell {cell} (BS {bs:?}): {source}")]
    Bisection { cell: usize, bs: Option<usize>, source: BisectionError },
    #[error("zero-forcing infeasible for user {user} in cell {cell}: {available} free dimensions for {streams} streams")]
    InfeasibleZf { cell: usize, user: usize, available: usize, streams: usize },
    #[error("block update of BS {bs} in cell {cell} lowered the bound from {before} to {after}")]
    InnerDescent { cell: usize, bs: usize, before: f64, after: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// New precoders for the users of one cell and solver bookkeeping.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub blocks: Vec<CMatrix>,
    pub bisections: Vec<BisectionOutcome>,
    /// Largest first-order residual of the last round of block problems.
    pub kkt_residual: f64,
    pub block_updates: usize,
    pub inner_rounds: usize,
}

/// How hard to work on a ComP cell's bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerMode {
    /// Cycle block updates until the relative round gain is at most `tol`.
    Exact { tol: f64 },
    /// One update per BS.
    SinglePass,
}

/// Maximizes the bound over one cell's precoders with the scenario's solver.
/// `zf` must hold the cell's bases in the zero-forcing scenario.
pub fn solve_cell(
    problem: &Problem,
    model: &SurrogateModel,
    cell: usize,
    mode: InnerMode,
    zf: Option<&ZfBasis>,
    spec: &BisectionSpec,
) -> Result<CellSolution, SolverError> {
    match problem.scenario {
        Scenario::Ibc => ibc_update(problem, model, cell, spec),
        Scenario::IbcZf => {
            let basis = zf.expect("zero-forcing bases are required for IBC-ZF");
            zf_update(problem, model, basis, cell, spec)
        }
        Scenario::CompFull | Scenario::CompPartialFixed | Scenario::CompSparse => {
            let init: Vec<CMatrix> =
                problem.topology().cell(cell).users.clone().map(|u| model.expansion.user(u).clone()).collect();
            match mode {
                InnerMode::Exact { tol } => comp_exact_solve(problem, model, cell, &init, tol, spec),
                InnerMode::SinglePass => comp_single_pass(problem, model, cell, &init, spec),
            }
        }
    }
}
