//! Cell-level updates for the interfering broadcast channel: the closed-form
//! update under a cell sum-power budget and its zero-forcing variant.

use crate::linalg::{hermitian_part, null_space_basis, CMatrix, LinalgError, DEFAULT_RANK_TOL};
use crate::network::{ChannelSet, Problem};
use crate::surrogate::SurrogateModel;

use super::bisection::BisectionSpec;
use super::quadratic::{solve_groups, solve_shared, Group};
use super::{CellSolution, SolverError};

/// Maximizes the cell's bound `Σ_i [2 Re Tr(S_iᴴV_i) − Tr(V_iᴴJV_i)]`
/// under the cell budget: `V_i = (J + λI)⁻¹ S_i`.
///
/// A cell with several BSs is handled as one virtual BS with the stacked
/// antennas and the total cell budget.
pub fn ibc_update(problem: &Problem, model: &SurrogateModel, cell: usize, spec: &BisectionSpec) -> Result<CellSolution, SolverError> {
    let users = problem.topology().cell(cell).users.clone();
    let linear: Vec<CMatrix> = users.clone().map(|u| model.linear[u].clone()).collect();
    let gammas = vec![0.0; linear.len()];
    let budget = problem.channels.cell_budget[cell];
    let sol = solve_shared(&model.curvature[cell], &linear, &gammas, budget, spec)
        .map_err(|source| SolverError::Bisection { cell, bs: None, source })?;
    Ok(CellSolution {
        blocks: sol.blocks,
        bisections: vec![sol.bisection],
        kkt_residual: sol.kkt_residual,
        block_updates: 1,
        inner_rounds: 1,
    })
}

/// Orthonormal bases of the zero-forcing subspaces of one cell: user `i`
/// may only transmit in the null space of the other in-cell users' channels.
#[derive(Debug, Clone)]
pub struct ZfBasis {
    pub cell: usize,
    /// One `(M·Q_k) × r_i` matrix per user of the cell.
    pub bases: Vec<CMatrix>,
}

/// Computes the zero-forcing bases of `cell`.
pub fn zf_basis(ch: &ChannelSet, cell: usize) -> Result<ZfBasis, SolverError> {
    let topo = &ch.topology;
    let users: Vec<usize> = topo.cell(cell).users.clone().collect();
    let n = topo.rx_antennas;
    let dim = topo.cell_dim(cell);
    let mut bases = Vec::with_capacity(users.len());
    for &u in &users {
        let others: Vec<usize> = users.iter().copied().filter(|&j| j != u).collect();
        let mut stacked = CMatrix::zeros(others.len() * n, dim);
        for (r, &j) in others.iter().enumerate() {
            stacked.view_mut((r * n, 0), (n, dim)).copy_from(ch.link(j, cell));
        }
        let streams = topo.user(u).streams;
        let basis = match null_space_basis(&stacked, DEFAULT_RANK_TOL) {
            Ok(b) => b,
            Err(LinalgError::EmptyNullSpace) => {
                return Err(SolverError::InfeasibleZf { cell, user: u, available: 0, streams })
            }
            Err(e) => return Err(SolverError::Linalg(e)),
        };
        if basis.ncols() < streams {
            return Err(SolverError::InfeasibleZf { cell, user: u, available: basis.ncols(), streams });
        }
        bases.push(basis);
    }
    Ok(ZfBasis { cell, bases })
}

/// Zero-forcing update: `V_i = R_i W_i` with
/// `W_i = (R_iᴴ J R_i + λI)⁻¹ R_iᴴ S_i` and one multiplier for the cell
/// budget. Since `R_i` has orthonormal columns, `‖V_i‖ = ‖W_i‖`.
pub fn zf_update(
    problem: &Problem,
    model: &SurrogateModel,
    basis: &ZfBasis,
    cell: usize,
    spec: &BisectionSpec,
) -> Result<CellSolution, SolverError> {
    let users: Vec<usize> = problem.topology().cell(cell).users.clone().collect();
    let j = &model.curvature[cell];
    let reduced: Vec<CMatrix> = basis.bases.iter().map(|r| hermitian_part(&(r.adjoint() * j * r))).collect();
    let linear: Vec<CMatrix> = basis.bases.iter().zip(&users).map(|(r, &u)| r.adjoint() * &model.linear[u]).collect();
    let eigens: Vec<_> = reduced.iter().map(crate::linalg::hermitian_eigen).collect();
    let groups: Vec<Group<'_>> = eigens.iter().zip(&linear).map(|(e, b)| Group::new(e, b, 0.0)).collect();
    let mats: Vec<&CMatrix> = reduced.iter().collect();
    let lins: Vec<&CMatrix> = linear.iter().collect();
    let budget = problem.channels.cell_budget[cell];
    let sol = solve_groups(&groups, &mats, &lins, budget, spec)
        .map_err(|source| SolverError::Bisection { cell, bs: None, source })?;
    let blocks = basis.bases.iter().zip(&sol.blocks).map(|(r, w)| r * w).collect();
    Ok(CellSolution {
        blocks,
        bisections: vec![sol.bisection],
        kkt_residual: sol.kkt_residual,
        block_updates: 1,
        inner_rounds: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, real_matrix};
    use crate::network::{Scenario, Topology, Utility};
    use crate::rate::PrecoderSet;
    use crate::surrogate::build_surrogate;

    fn scalar_problem(budget: f64) -> Problem {
        let topo = Topology::new(1, 1, &[1], &[1], &[1]);
        let ch = ChannelSet::from_parts(topo, vec![vec![real_matrix(1, 1, &[1.0])]], vec![1.0], vec![vec![budget]]);
        Problem::with_channels(ch, Scenario::Ibc, Utility::WeightedSumRate)
    }

    #[test]
    fn scalar_updates() {
        let spec = BisectionSpec::default();
        let v = PrecoderSet::from_blocks(vec![real_matrix(1, 1, &[1.0])]);
        // J = 1/2, S = 1
        let p = scalar_problem(9.0);
        let m = build_surrogate(&p, &v, &[0.0]).unwrap();
        let sol = ibc_update(&p, &m, 0, &spec).unwrap();
        assert_eq!(sol.bisections[0].lambda, 0.0);
        assert!((sol.blocks[0][(0, 0)] - c64(2.0, 0.0)).norm() < 1e-14);
        let p = scalar_problem(1.0);
        let m = build_surrogate(&p, &v, &[0.0]).unwrap();
        let sol = ibc_update(&p, &m, 0, &spec).unwrap();
        assert!((sol.bisections[0].lambda - 0.5).abs() < 1e-8);
        assert!((sol.blocks[0][(0, 0)] - c64(1.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn zero_linear_term_gives_zero() {
        let p = scalar_problem(1.0);
        let v = PrecoderSet::zeros(p.topology());
        let m = build_surrogate(&p, &v, &[0.0]).unwrap();
        let sol = ibc_update(&p, &m, 0, &BisectionSpec::default()).unwrap();
        assert_eq!(sol.blocks[0].norm(), 0.0);
    }

    #[test]
    fn hand_null_space() {
        // M = 2, N = 1, two users; user 1 has channel [1, 0]
        let topo = Topology::new(2, 1, &[1], &[2], &[1, 1]);
        let links = vec![vec![real_matrix(1, 2, &[0.3, 0.7])], vec![real_matrix(1, 2, &[1.0, 0.0])]];
        let ch = ChannelSet::from_parts(topo, links, vec![1.0, 1.0], vec![vec![1.0]]);
        let zb = zf_basis(&ch, 0).unwrap();
        let r0 = &zb.bases[0];
        assert_eq!(r0.shape(), (2, 1));
        assert!(r0[(0, 0)].norm() < 1e-12);
        assert!((r0[(1, 0)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_user_basis_is_unitary() {
        let topo = Topology::new(3, 1, &[1], &[1], &[1]);
        let ch = ChannelSet::from_parts(topo, vec![vec![real_matrix(1, 3, &[1.0, 2.0, 3.0])]], vec![1.0], vec![vec![1.0]]);
        let zb = zf_basis(&ch, 0).unwrap();
        let r = &zb.bases[0];
        assert!((r.adjoint() * r - CMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn too_many_users_is_infeasible() {
        let topo = Topology::new(2, 1, &[1], &[3], &[1, 1, 1]);
        let links = vec![
            vec![real_matrix(1, 2, &[1.0, 0.0])],
            vec![real_matrix(1, 2, &[0.0, 1.0])],
            vec![real_matrix(1, 2, &[1.0, 1.0])],
        ];
        let ch = ChannelSet::from_parts(topo, links, vec![1.0; 3], vec![vec![1.0]]);
        assert!(matches!(zf_basis(&ch, 0), Err(SolverError::InfeasibleZf { .. })));
    }
}
