//! Physical-layer quantities: received covariance, MMSE receiver, MSE and
//! MMSE matrices, per-user rates, utilities, the sparsity penalty and the
//! system objective `u(V) = Σ f(R) − s(V)`.
//!
//! All rates are in nats.

use nalgebra::DMatrixView;
use thiserror::Error;

use crate::linalg::{hermitian_part, hpd_factorize, hpd_solve, logdet_hpd, trace_re, CMatrix, HpdFactor, LinalgError};
use crate::network::{ChannelSet, PenaltyWeights, Problem, Scenario, Topology, Utility};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("shape mismatch for user {user}: expected {expected:?}, got {got:?}")]
    ShapeMismatch { user: usize, expected: (usize, usize), got: (usize, usize) },
    #[error("covariance of user {user} is singular: {source}")]
    SingularCovariance { user: usize, source: LinalgError },
}

/// Transmit precoders, one `(M·Q_k) × d` matrix per user. Rows
/// `q·M .. (q+1)·M` form the block sent from BS `q` of the user's cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    blocks: Vec<CMatrix>,
}

impl PrecoderSet {
    pub fn zeros(topology: &Topology) -> Self {
        let blocks = (0..topology.num_users())
            .map(|u| {
                let info = topology.user(u);
                CMatrix::zeros(topology.cell_dim(info.cell), info.streams)
            })
            .collect();
        PrecoderSet { blocks }
    }

    pub fn from_blocks(blocks: Vec<CMatrix>) -> Self {
        PrecoderSet { blocks }
    }

    pub fn into_blocks(self) -> Vec<CMatrix> {
        self.blocks
    }

    pub fn num_users(&self) -> usize {
        self.blocks.len()
    }

    pub fn user(&self, u: usize) -> &CMatrix {
        &self.blocks[u]
    }

    pub fn user_mut(&mut self, u: usize) -> &mut CMatrix {
        &mut self.blocks[u]
    }

    pub fn blocks(&self) -> &[CMatrix] {
        &self.blocks
    }

    /// The `M × d` block of user `u` sent from BS `q`.
    pub fn bs_block(&self, topology: &Topology, u: usize, q: usize) -> DMatrixView<'_, num_complex::Complex64> {
        let rows = topology.bs_rows(q);
        self.blocks[u].rows(rows.start, rows.len())
    }

    pub fn set_bs_block(&mut self, topology: &Topology, u: usize, q: usize, block: &CMatrix) {
        let rows = topology.bs_rows(q);
        self.blocks[u].rows_mut(rows.start, rows.len()).copy_from(block);
    }

    /// `Σ_i ‖V_i‖²_F` over the users of `cell`.
    pub fn cell_power(&self, topology: &Topology, cell: usize) -> f64 {
        topology.cell(cell).users.clone().map(|u| self.blocks[u].norm_squared()).sum()
    }

    /// `Σ_i ‖V^q_i‖²_F` over the users of `cell`.
    pub fn bs_power(&self, topology: &Topology, cell: usize, q: usize) -> f64 {
        topology
            .cell(cell)
            .users
            .clone()
            .map(|u| self.bs_block(topology, u, q).norm_squared())
            .sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    /// `‖self − other‖_F` over all users.
    pub fn distance(&self, other: &PrecoderSet) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// `self + t·dir`.
    pub fn axpy(&self, t: f64, dir: &PrecoderSet) -> PrecoderSet {
        let blocks = self.blocks.iter().zip(&dir.blocks).map(|(a, d)| a + d.scale(t)).collect();
        PrecoderSet { blocks }
    }

    pub fn scaled(&self, t: f64) -> PrecoderSet {
        PrecoderSet { blocks: self.blocks.iter().map(|b| b.scale(t)).collect() }
    }

    pub fn sub(&self, other: &PrecoderSet) -> PrecoderSet {
        let blocks = self.blocks.iter().zip(&other.blocks).map(|(a, b)| a - b).collect();
        PrecoderSet { blocks }
    }

    /// Checks every block against the shape implied by `topology`.
    pub fn check_shapes(&self, topology: &Topology) -> Result<(), RateError> {
        if self.blocks.len() != topology.num_users() {
            return Err(RateError::ShapeMismatch {
                user: self.blocks.len(),
                expected: (topology.num_users(), 0),
                got: (self.blocks.len(), 0),
            });
        }
        for (u, b) in self.blocks.iter().enumerate() {
            let info = topology.user(u);
            let expected = (topology.cell_dim(info.cell), info.streams);
            if b.shape() != expected {
                return Err(RateError::ShapeMismatch { user: u, expected, got: b.shape() });
            }
        }
        Ok(())
    }
}

/// Received signal of user `j` as seen by user `u`: `H^{cell(j)}_u V_j`.
fn received(ch: &ChannelSet, v: &PrecoderSet, u: usize, j: usize) -> CMatrix {
    let cell = ch.topology.user(j).cell;
    ch.link(u, cell) * v.user(j)
}

fn noise_identity(ch: &ChannelSet, u: usize) -> CMatrix {
    let n = ch.topology.rx_antennas;
    CMatrix::identity(n, n).scale(ch.noise_power[u])
}

/// `C_u = Σ_j H V_j V_jᴴ Hᴴ + σ²_u I`, summed over every user in the network.
pub fn covariance(ch: &ChannelSet, v: &PrecoderSet, user: usize) -> Result<CMatrix, RateError> {
    v.check_shapes(&ch.topology)?;
    Ok(covariance_unchecked(ch, v, user))
}

fn covariance_unchecked(ch: &ChannelSet, v: &PrecoderSet, user: usize) -> CMatrix {
    let mut c = noise_identity(ch, user);
    for j in 0..v.num_users() {
        let t = received(ch, v, user, j);
        c += &t * t.adjoint();
    }
    hermitian_part(&c)
}

/// Interference-plus-noise covariance `Y_u = C_u − H V_u V_uᴴ Hᴴ`, formed
/// without the subtraction.
pub fn interference_covariance(ch: &ChannelSet, v: &PrecoderSet, user: usize) -> Result<CMatrix, RateError> {
    v.check_shapes(&ch.topology)?;
    let mut y = noise_identity(ch, user);
    for j in (0..v.num_users()).filter(|&j| j != user) {
        let t = received(ch, v, user, j);
        y += &t * t.adjoint();
    }
    Ok(hermitian_part(&y))
}

fn factor(a: &CMatrix, user: usize) -> Result<HpdFactor, RateError> {
    match hpd_factorize(a, 0.0) {
        Ok(f) => Ok(f),
        Err(LinalgError::NotPositiveDefinite { .. }) => {
            hpd_factorize(a, 1e-12 * trace_re(a).abs().max(f64::MIN_POSITIVE))
                .map_err(|source| RateError::SingularCovariance { user, source })
        }
        Err(source) => Err(RateError::SingularCovariance { user, source }),
    }
}

/// MMSE receiver `U_u = C_u⁻¹ H^k_u V_u`.
pub fn mmse_receiver(ch: &ChannelSet, v: &PrecoderSet, user: usize) -> Result<CMatrix, RateError> {
    let c = covariance(ch, v, user)?;
    let f = factor(&c, user)?;
    let hv = ch.own_link(user) * v.user(user);
    Ok(hpd_solve(&f, &hv).expect("dimensions match"))
}

/// MSE matrix of user `user` under arbitrary receivers `receivers[j]`:
/// `(I − UᴴHV)(I − UᴴHV)ᴴ + Σ_{j≠u} UᴴHV_jV_jᴴHᴴU + σ² UᴴU`.
pub fn mse_matrix(ch: &ChannelSet, v: &PrecoderSet, receivers: &[CMatrix], user: usize) -> Result<CMatrix, RateError> {
    v.check_shapes(&ch.topology)?;
    let u = &receivers[user];
    let d = v.user(user).ncols();
    let n = ch.topology.rx_antennas;
    if u.shape() != (n, d) {
        return Err(RateError::ShapeMismatch { user, expected: (n, d), got: u.shape() });
    }
    let uh = u.adjoint();
    let own = CMatrix::identity(d, d) - &uh * received(ch, v, user, user);
    let mut e = &own * own.adjoint() + (&uh * u).scale(ch.noise_power[user]);
    for j in (0..v.num_users()).filter(|&j| j != user) {
        let t = &uh * received(ch, v, user, j);
        e += &t * t.adjoint();
    }
    Ok(hermitian_part(&e))
}

/// Everything the receiver side knows about one user at a given `V`.
#[derive(Debug, Clone)]
pub struct ReceiverState {
    /// Received covariance `C`.
    pub covariance: CMatrix,
    /// MMSE receiver `U = C⁻¹HV`.
    pub receiver: CMatrix,
    /// MMSE matrix `E = I − VᴴHᴴC⁻¹HV`.
    pub mmse: CMatrix,
    /// `E⁻¹ = I + VᴴHᴴY⁻¹HV`.
    pub mmse_inv: CMatrix,
    /// Rate `−log|E|`, nats.
    pub rate: f64,
    /// Utility value `f(R)`.
    pub utility: f64,
    /// Utility derivative `f'(R)`.
    pub weight: f64,
}

/// Computes [`ReceiverState`] for one user.
///
/// `E⁻¹` is formed directly from the interference-plus-noise covariance
/// `Y`, which keeps it accurate when the SINR is high and `E` is nearly
/// singular. `E` is then its inverse.
pub fn receiver_state(
    ch: &ChannelSet,
    v: &PrecoderSet,
    user: usize,
    utility: Utility,
    weight: f64,
) -> Result<ReceiverState, RateError> {
    v.check_shapes(&ch.topology)?;
    Ok(receiver_state_unchecked(ch, v, user, utility, weight)?)
}

pub(crate) fn receiver_state_unchecked(
    ch: &ChannelSet,
    v: &PrecoderSet,
    user: usize,
    utility: Utility,
    weight: f64,
) -> Result<ReceiverState, RateError> {
    let hv = received(ch, v, user, user);
    let mut y = noise_identity(ch, user);
    for j in (0..v.num_users()).filter(|&j| j != user) {
        let t = received(ch, v, user, j);
        y += &t * t.adjoint();
    }
    let y = hermitian_part(&y);
    let c = hermitian_part(&(&y + &hv * hv.adjoint()));

    let fc = factor(&c, user)?;
    let receiver = hpd_solve(&fc, &hv).expect("dimensions match");
    let fy = factor(&y, user)?;
    let y_inv_hv = hpd_solve(&fy, &hv).expect("dimensions match");
    let d = hv.ncols();
    let mmse_inv = hermitian_part(&(CMatrix::identity(d, d) + hv.adjoint() * y_inv_hv));
    let f_inv = hpd_factorize(&mmse_inv, 0.0).map_err(|source| RateError::SingularCovariance { user, source })?;
    let mmse = hermitian_part(&f_inv.inverse());
    let rate = logdet_hpd(&f_inv).max(0.0);
    let (value, derivative) = utility_and_derivative(utility, weight, rate);
    Ok(ReceiverState { covariance: c, receiver, mmse, mmse_inv, rate, utility: value, weight: derivative })
}

/// MMSE matrix `E = I − VᴴHᴴC⁻¹HV` of one user.
pub fn mmse_matrix(ch: &ChannelSet, v: &PrecoderSet, user: usize) -> Result<CMatrix, RateError> {
    Ok(receiver_state(ch, v, user, Utility::WeightedSumRate, 1.0)?.mmse)
}

/// Achievable rate `−log|E|` in nats.
pub fn user_rate(ch: &ChannelSet, v: &PrecoderSet, user: usize) -> Result<f64, RateError> {
    Ok(receiver_state(ch, v, user, Utility::WeightedSumRate, 1.0)?.rate)
}

/// Utility value and its derivative at rate `r` (nats).
pub fn utility_and_derivative(kind: Utility, weight: f64, r: f64) -> (f64, f64) {
    debug_assert!(r >= 0.0, "negative rate {r}");
    match kind {
        Utility::WeightedSumRate => (weight * r, weight),
        Utility::LogOnePlusRate => (weight * r.ln_1p(), weight / (1.0 + r)),
    }
}

/// Group-sparsity penalty `Σ γ^q_u ‖V^q_u‖_F`.
pub fn penalty(topology: &Topology, v: &PrecoderSet, gamma: &PenaltyWeights) -> f64 {
    let mut s = 0.0;
    for u in 0..v.num_users() {
        let cell = topology.user(u).cell;
        for q in 0..topology.cell(cell).num_bs {
            let g = gamma.get(u, q);
            if g != 0.0 {
                s += g * v.bs_block(topology, u, q).norm();
            }
        }
    }
    s
}

/// Receiver states of every user plus the assembled objective.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub states: Vec<ReceiverState>,
    /// `Σ f(R)`.
    pub utility: f64,
    /// `s(V)`.
    pub penalty: f64,
}

impl Evaluation {
    /// `u(V) = f(V) − s(V)`.
    pub fn objective(&self) -> f64 {
        self.utility - self.penalty
    }

    pub fn rates(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.rate).collect()
    }
}

pub fn evaluate(problem: &Problem, v: &PrecoderSet) -> Result<Evaluation, RateError> {
    let ch = &problem.channels;
    v.check_shapes(&ch.topology)?;
    let states = crate::par_map(v.num_users(), |u| {
        receiver_state_unchecked(ch, v, u, problem.utility, problem.weights[u])
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let utility = states.iter().map(|s| s.utility).sum();
    let penalty = penalty(&ch.topology, v, &problem.penalty);
    Ok(Evaluation { states, utility, penalty })
}

/// System objective `u(V) = Σ f(R(V)) − s(V)`.
pub fn objective(problem: &Problem, v: &PrecoderSet) -> Result<f64, RateError> {
    Ok(evaluate(problem, v)?.objective())
}

/// Sum utility `f(V)` without the penalty.
pub fn sum_utility(problem: &Problem, v: &PrecoderSet) -> Result<f64, RateError> {
    Ok(evaluate(problem, v)?.utility)
}

/// One violated constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    CellPower { cell: usize, power: f64, budget: f64 },
    BsPower { cell: usize, bs: usize, power: f64, budget: f64 },
    ZeroForcing { user: usize, other: usize, residual: f64 },
    NotServed { user: usize, bs: usize, norm: f64 },
    Shape(RateError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative tolerance used when no other is given.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-6;

/// Checks the scenario's constraints. Power limits allow `budget·(1+tol)`;
/// zero-forcing residuals and non-serving blocks must be at most `tol` in
/// Frobenius norm.
pub fn is_feasible(problem: &Problem, v: &PrecoderSet, tol: f64) -> FeasibilityReport {
    let ch = &problem.channels;
    let topo = &ch.topology;
    let mut report = FeasibilityReport::default();
    if let Err(e) = v.check_shapes(topo) {
        report.violations.push(Violation::Shape(e));
        return report;
    }
    for (cell, layout) in topo.cells().iter().enumerate() {
        if problem.scenario.per_bs_power() {
            for q in 0..layout.num_bs {
                let power = v.bs_power(topo, cell, q);
                let budget = ch.bs_budget[cell][q];
                if power > budget * (1.0 + tol) {
                    report.violations.push(Violation::BsPower { cell, bs: q, power, budget });
                }
            }
        } else {
            let power = v.cell_power(topo, cell);
            let budget = ch.cell_budget[cell];
            if power > budget * (1.0 + tol) {
                report.violations.push(Violation::CellPower { cell, power, budget });
            }
        }
        if problem.scenario == Scenario::IbcZf {
            for user in layout.users.clone() {
                for other in layout.users.clone().filter(|&o| o != user) {
                    let residual = (ch.link(other, cell) * v.user(user)).norm();
                    if residual > tol {
                        report.violations.push(Violation::ZeroForcing { user, other, residual });
                    }
                }
            }
        }
        if problem.scenario == Scenario::CompPartialFixed {
            for user in layout.users.clone() {
                let local = topo.user(user).local;
                for q in 0..layout.num_bs {
                    if !problem.serving.serves(cell, q, local) {
                        let norm = v.bs_block(topo, user, q).norm();
                        if norm > tol {
                            report.violations.push(Violation::NotServed { user, bs: q, norm });
                        }
                    }
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, min_eigenvalue, real_matrix};
    use crate::network::{NetworkConfig, Scenario};
    use num_complex::Complex64;

    /// One cell, one BS, one user, all scalars.
    pub(crate) fn scalar_channel(h: f64, noise: f64, budget: f64) -> ChannelSet {
        let topo = Topology::new(1, 1, &[1], &[1], &[1]);
        ChannelSet::from_parts(topo, vec![vec![real_matrix(1, 1, &[h])]], vec![noise], vec![vec![budget]])
    }

    fn scalar_v(v: f64) -> PrecoderSet {
        PrecoderSet::from_blocks(vec![real_matrix(1, 1, &[v])])
    }

    #[test]
    fn scalar_receiver_quantities() {
        let ch = scalar_channel(1.0, 1.0, 10.0);
        let v = scalar_v(1.0);
        assert!((covariance(&ch, &v, 0).unwrap()[(0, 0)] - c64(2.0, 0.0)).norm() < 1e-15);
        assert!((mmse_receiver(&ch, &v, 0).unwrap()[(0, 0)] - c64(0.5, 0.0)).norm() < 1e-15);
        assert!((mmse_matrix(&ch, &v, 0).unwrap()[(0, 0)] - c64(0.5, 0.0)).norm() < 1e-15);
        let e = mse_matrix(&ch, &v, &[real_matrix(1, 1, &[0.5])], 0).unwrap();
        assert!((e[(0, 0)] - c64(0.5, 0.0)).norm() < 1e-15);
        assert!((user_rate(&ch, &v, 0).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_precoder_quantities() {
        let mut cfg = NetworkConfig::new(2, 2, 2, 3, 2);
        cfg.streams = crate::network::OneOrMany::One(2);
        cfg.rng_seed = 3;
        let ch = crate::network::generate_instance(&cfg).unwrap();
        let v = PrecoderSet::zeros(&ch.topology);
        let c = covariance(&ch, &v, 1).unwrap();
        assert!((c - CMatrix::identity(2, 2)).norm() < 1e-15);
        assert_eq!(mmse_receiver(&ch, &v, 1).unwrap(), CMatrix::zeros(2, 2));
        assert!((mmse_matrix(&ch, &v, 1).unwrap() - CMatrix::identity(2, 2)).norm() < 1e-15);
        assert_eq!(user_rate(&ch, &v, 1).unwrap(), 0.0);
        let zero_rx = vec![CMatrix::zeros(2, 2); 4];
        assert!((mse_matrix(&ch, &v, &zero_rx, 1).unwrap() - CMatrix::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn utilities() {
        assert_eq!(utility_and_derivative(Utility::WeightedSumRate, 1.0, 0.7), (0.7, 1.0));
        assert_eq!(utility_and_derivative(Utility::LogOnePlusRate, 1.0, 0.0), (0.0, 1.0));
        let (f, c) = utility_and_derivative(Utility::LogOnePlusRate, 1.0, 1.0);
        assert!((f - 2f64.ln()).abs() < 1e-15);
        assert_eq!(c, 0.5);
    }

    #[test]
    fn penalty_single_block() {
        let topo = Topology::new(2, 1, &[1], &[1], &[1]);
        let v = PrecoderSet::from_blocks(vec![real_matrix(2, 1, &[3.0, 4.0])]);
        assert_eq!(penalty(&topo, &v, &PenaltyWeights::uniform(&topo, 2.0)), 10.0);
        assert_eq!(penalty(&topo, &v, &PenaltyWeights::zero(&topo)), 0.0);
    }

    #[test]
    fn objective_scalar_and_zero() {
        let ch = scalar_channel(1.0, 1.0, 10.0);
        let p = Problem::with_channels(ch, Scenario::Ibc, Utility::WeightedSumRate);
        assert_eq!(objective(&p, &PrecoderSet::zeros(p.topology())).unwrap(), 0.0);
        assert!((objective(&p, &scalar_v(1.0)).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn feasibility_reports() {
        let mut cfg = NetworkConfig::new(1, 2, 2, 2, 1);
        cfg.total_cell_power = Some(crate::network::OneOrMany::One(4.0));
        let problem = crate::network::generate_problem(&cfg).unwrap();
        let topo = problem.topology().clone();
        let zero = PrecoderSet::zeros(&topo);
        for scenario in [Scenario::Ibc, Scenario::IbcZf, Scenario::CompFull, Scenario::CompPartialFixed, Scenario::CompSparse] {
            let mut p = problem.clone();
            p.scenario = scenario;
            assert!(is_feasible(&p, &zero, 1e-6).is_feasible());
        }
        // put twice the budget of BS 1 on user 0
        let budget = problem.channels.bs_budget[0][1];
        let mut v = zero.clone();
        let block = CMatrix::from_element(2, 1, Complex64::new((budget).sqrt(), 0.0));
        v.set_bs_block(&topo, 0, 1, &block);
        let report = is_feasible(&problem, &v, 1e-6);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(report.violations[0], Violation::BsPower { cell: 0, bs: 1, .. }));
    }

    #[test]
    fn receiver_state_invariants() {
        let mut cfg = NetworkConfig::new(2, 2, 2, 2, 2);
        cfg.rng_seed = 11;
        let problem = crate::network::generate_problem(&cfg).unwrap();
        let ch = &problem.channels;
        let mut v = PrecoderSet::zeros(&ch.topology);
        for u in 0..4 {
            *v.user_mut(u) = CMatrix::from_fn(4, 1, |i, _| c64(1.0 + i as f64, 0.5 - u as f64));
        }
        let eval = evaluate(&problem, &v).unwrap();
        for (u, s) in eval.states.iter().enumerate() {
            let c = covariance(ch, &v, u).unwrap();
            assert!((&s.covariance - &c).norm() <= 1e-12 * c.norm());
            let ident = &s.mmse * &s.mmse_inv;
            assert!((ident - CMatrix::identity(1, 1)).norm() < 1e-9);
            let e_direct = CMatrix::identity(1, 1) - v.user(u).adjoint() * ch.own_link(u).adjoint() * &s.receiver;
            assert!((hermitian_part(&e_direct) - &s.mmse).norm() < 1e-9);
            let lam = min_eigenvalue(&s.mmse);
            assert!(lam > -1e-9 && lam <= 1.0 + 1e-9);
        }
    }
}
