//! Power-constrained concave quadratic with optional group-sparsity terms:
//!
//! maximize `Σ_i [2 Re Tr(B_iᴴ X_i) − Tr(X_iᴴ A_i X_i) − γ_i ‖X_i‖_F]`
//! subject to `Σ_i ‖X_i‖²_F ≤ P`,
//!
//! with every `A_i` Hermitian positive semidefinite. For a fixed multiplier
//! `λ` each group decouples. With `γ_i = 0` the group solution is
//! `(A_i + λI)⁻¹ B_i`. With `γ_i > 0` it is zero when `2‖B_i‖ ≤ γ_i` and
//! otherwise `(A_i + (λ + μ)I)⁻¹ B_i`, where `μ > 0` solves
//! `2μ ‖X_i(μ)‖ = γ_i`. The multiplier `λ` is found by bisection.

use crate::linalg::{hermitian_eigen, CMatrix, HermitianEigen};

use super::bisection::{bisect_multiplier, BisectionError, BisectionOutcome, BisectionSpec};

/// Eigenvalues below this fraction of the largest are treated as zero when
/// `λ = 0`.
const NULL_EIGEN_REL: f64 = 1e-12;
/// Components of the linear term along numerically null directions below
/// this fraction of its norm are dropped rather than declared unbounded.
const NULL_COMPONENT_REL: f64 = 1e-8;
/// Groups whose solution is below this Frobenius norm are set to exactly zero.
pub const ZERO_BLOCK_TOL: f64 = 1e-12;

/// One group of the problem in the eigenbasis of its quadratic matrix.
#[derive(Debug, Clone)]
pub struct Group<'a> {
    pub eigen: &'a HermitianEigen,
    /// `Qᴴ B` with `A = Q diag(a) Qᴴ`.
    pub rotated: CMatrix,
    /// Frobenius norm of `B`.
    pub linear_norm: f64,
    pub gamma: f64,
}

impl<'a> Group<'a> {
    pub fn new(eigen: &'a HermitianEigen, linear: &CMatrix, gamma: f64) -> Self {
        Group { eigen, rotated: eigen.vectors.adjoint() * linear, linear_norm: linear.norm(), gamma }
    }

    fn is_zeroed(&self) -> bool {
        self.linear_norm == 0.0 || (self.gamma > 0.0 && 2.0 * self.linear_norm <= self.gamma)
    }

    /// Row weights `|t_j|²` of the rotated linear term.
    fn row_weights(&self) -> Vec<f64> {
        self.rotated.row_iter().map(|r| r.norm_squared()).collect()
    }

    fn max_eigen(&self) -> f64 {
        self.eigen.values.iter().copied().fold(0.0, f64::max)
    }

    /// `‖(A + sI)⁺ B‖²` in the eigenbasis, with the null-space rule at `s = 0`.
    fn norm_sq_at(&self, weights: &[f64], shift: f64) -> f64 {
        let thresh = NULL_EIGEN_REL * self.max_eigen();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        for (a, w) in self.eigen.values.iter().zip(weights) {
            let denom = a.max(0.0) + shift;
            if shift == 0.0 && *a <= thresh {
                if *w > (NULL_COMPONENT_REL * NULL_COMPONENT_REL) * total {
                    return f64::INFINITY;
                }
                continue;
            }
            acc += w / (denom * denom);
        }
        acc
    }

    /// Sparsity shift `μ` for multiplier `λ` (0 when `γ = 0`).
    fn sparsity_shift(&self, weights: &[f64], lambda: f64) -> f64 {
        if self.gamma == 0.0 {
            return 0.0;
        }
        // φ(μ) = 2μ‖X(μ)‖ increases from 0 to 2‖B‖ > γ
        let phi = |mu: f64| 2.0 * mu * self.norm_sq_at(weights, lambda + mu).sqrt();
        let mut lo = 0.0;
        let mut hi = self.gamma.max(f64::MIN_POSITIVE);
        while phi(hi) < self.gamma {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                break;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if phi(mid) < self.gamma {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// `‖X(λ)‖²`.
    pub fn power(&self, lambda: f64) -> f64 {
        if self.is_zeroed() {
            return 0.0;
        }
        let w = self.row_weights();
        let mu = self.sparsity_shift(&w, lambda);
        self.norm_sq_at(&w, lambda + mu)
    }

    /// `X(λ)` in the original coordinates and the total shift `λ + μ`.
    pub fn solution(&self, lambda: f64) -> (CMatrix, f64) {
        let (n, d) = self.rotated.shape();
        if self.is_zeroed() {
            return (CMatrix::zeros(n, d), lambda);
        }
        let w = self.row_weights();
        let shift = lambda + self.sparsity_shift(&w, lambda);
        let thresh = NULL_EIGEN_REL * self.max_eigen();
        let mut y = self.rotated.clone();
        for (j, a) in self.eigen.values.iter().enumerate() {
            if shift == 0.0 && *a <= thresh {
                y.row_mut(j).fill(num_complex::Complex64::new(0.0, 0.0));
            } else {
                let denom = a.max(0.0) + shift;
                y.row_mut(j).scale_mut(1.0 / denom);
            }
        }
        let x = &self.eigen.vectors * y;
        if x.norm() < ZERO_BLOCK_TOL {
            return (CMatrix::zeros(n, d), shift);
        }
        (x, shift)
    }
}

/// Solution of one power-constrained quadratic.
#[derive(Debug, Clone)]
pub struct QuadSolution {
    pub blocks: Vec<CMatrix>,
    pub bisection: BisectionOutcome,
    /// Largest `‖(A + (λ+μ)I)X − B‖_F / max(1, ‖B‖_F)` over active groups.
    pub kkt_residual: f64,
}

/// Solves the problem for `groups` under budget `budget`. `matrices[i]` and
/// `linear[i]` are the original `A_i` and `B_i`, used for the residual.
pub fn solve_groups(
    groups: &[Group<'_>],
    matrices: &[&CMatrix],
    linear: &[&CMatrix],
    budget: f64,
    spec: &BisectionSpec,
) -> Result<QuadSolution, BisectionError> {
    let total_power = |lambda: f64| groups.iter().map(|g| g.power(lambda)).sum::<f64>();
    let bisection = bisect_multiplier(total_power, budget, spec)?;
    let mut blocks = Vec::with_capacity(groups.len());
    let mut kkt_residual: f64 = 0.0;
    for (i, g) in groups.iter().enumerate() {
        let (x, shift) = g.solution(bisection.lambda);
        if x.norm() > 0.0 {
            let dim = x.nrows();
            let r = (matrices[i] + CMatrix::identity(dim, dim).scale(shift)) * &x - linear[i];
            kkt_residual = kkt_residual.max(r.norm() / linear[i].norm().max(1.0));
        }
        blocks.push(x);
    }
    Ok(QuadSolution { blocks, bisection, kkt_residual })
}

/// Convenience wrapper for groups that share one matrix `A`.
pub fn solve_shared(
    a: &CMatrix,
    linear: &[CMatrix],
    gammas: &[f64],
    budget: f64,
    spec: &BisectionSpec,
) -> Result<QuadSolution, BisectionError> {
    let eigen = hermitian_eigen(a);
    let groups: Vec<Group<'_>> = linear.iter().zip(gammas).map(|(b, g)| Group::new(&eigen, b, *g)).collect();
    let mats = vec![a; linear.len()];
    let lins: Vec<&CMatrix> = linear.iter().collect();
    solve_groups(&groups, &mats, &lins, budget, spec)
}

/// `Σ_i [2 Re Tr(B_iᴴ X_i) − Tr(X_iᴴ A X_i) − γ_i ‖X_i‖]` for a shared `A`.
pub fn shared_objective(a: &CMatrix, linear: &[CMatrix], gammas: &[f64], x: &[CMatrix]) -> f64 {
    linear
        .iter()
        .zip(gammas)
        .zip(x)
        .map(|((b, g), x)| 2.0 * crate::linalg::inner_re(b, x) - crate::surrogate::quad(a, x) - g * x.norm())
        .sum()
}
