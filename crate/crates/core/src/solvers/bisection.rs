//! Root bracketing for the power-constraint multiplier.

use thiserror::Error;

/// Tolerances for [`bisect_multiplier`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionSpec {
    /// Lower end of the search, normally 0.
    pub lambda_lo: f64,
    /// First trial upper end; doubled until the budget is met.
    pub lambda_hi: f64,
    /// Required `|power(λ*) − P̄| / P̄` when the constraint is active.
    pub tol_power: f64,
    /// Bisection stops once the bracket width falls below
    /// `tol_lambda · max(1, λ_hi)`.
    pub tol_lambda: f64,
    pub max_iters: usize,
    pub max_doublings: usize,
    /// The constraint is treated as inactive when `power(λ_lo) ≤ P̄·(1 + inactive_tol)`.
    pub inactive_tol: f64,
}

impl Default for BisectionSpec {
    fn default() -> Self {
        BisectionSpec {
            lambda_lo: 0.0,
            lambda_hi: 1.0,
            tol_power: 1e-8,
            tol_lambda: 1e-15,
            max_iters: 200,
            max_doublings: 60,
            inactive_tol: 0.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BisectionError {
    #[error("no upper bracket: power {power:.6e} still above budget {budget:.6e} at lambda {lambda:.3e}")]
    BracketFailure { lambda: f64, power: f64, budget: f64 },
    #[error("power is not nonincreasing: power({lo:.3e}) = {p_lo:.6e} < power({hi:.3e}) = {p_hi:.6e}")]
    NonMonotone { lo: f64, hi: f64, p_lo: f64, p_hi: f64 },
    #[error("bisection ended with power {power:.12e} against budget {budget:.12e}")]
    Tolerance { power: f64, budget: f64 },
    #[error("invalid budget {0}")]
    InvalidBudget(f64),
}

/// Result of one multiplier search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionOutcome {
    pub lambda: f64,
    /// `power(λ*)`.
    pub power: f64,
    pub budget: f64,
    /// `power(λ_lo)`, the unconstrained power when `λ_lo = 0`.
    pub unconstrained_power: f64,
    pub evaluations: usize,
}

impl BisectionOutcome {
    /// `|power − P̄| / P̄` for active constraints, 0 otherwise.
    pub fn relative_gap(&self) -> f64 {
        if self.lambda > 0.0 {
            (self.power - self.budget).abs() / self.budget
        } else {
            0.0
        }
    }

    /// `λ (P̄ − power)`, the complementarity product.
    pub fn complementarity(&self) -> f64 {
        self.lambda * (self.budget - self.power)
    }
}

/// Finds the multiplier `λ* ≥ 0` with `power(λ*) = P̄`, or `λ* = 0` when the
/// unconstrained solution already fits. `power_of_lambda` must be
/// nonincreasing; this is checked on the final bracket.
pub fn bisect_multiplier<F>(mut power_of_lambda: F, budget: f64, spec: &BisectionSpec) -> Result<BisectionOutcome, BisectionError>
where
    F: FnMut(f64) -> f64,
{
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(BisectionError::InvalidBudget(budget));
    }
    let mut evaluations = 1;
    let p_lo = power_of_lambda(spec.lambda_lo);
    if p_lo <= budget * (1.0 + spec.inactive_tol) {
        return Ok(BisectionOutcome {
            lambda: spec.lambda_lo,
            power: p_lo,
            budget,
            unconstrained_power: p_lo,
            evaluations,
        });
    }

    let mut lo = spec.lambda_lo;
    let mut hi = spec.lambda_hi.max(spec.lambda_lo);
    let mut p_hi = power_of_lambda(hi);
    evaluations += 1;
    let mut doublings = 0;
    while p_hi > budget {
        if doublings == spec.max_doublings {
            return Err(BisectionError::BracketFailure { lambda: hi, power: p_hi, budget });
        }
        lo = hi;
        hi = if hi > 0.0 { 2.0 * hi } else { 1.0 };
        p_hi = power_of_lambda(hi);
        evaluations += 1;
        doublings += 1;
    }
    if p_hi > p_lo {
        return Err(BisectionError::NonMonotone { lo: spec.lambda_lo, hi, p_lo, p_hi });
    }

    for _ in 0..spec.max_iters {
        if hi - lo <= spec.tol_lambda * hi.max(1.0) || budget - p_hi <= 1e-3 * spec.tol_power * budget {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = power_of_lambda(mid);
        evaluations += 1;
        if p > budget {
            lo = mid;
        } else {
            if p < p_hi {
                return Err(BisectionError::NonMonotone { lo: mid, hi, p_lo: p, p_hi });
            }
            hi = mid;
            p_hi = p;
        }
    }
    if (p_hi - budget).abs() > spec.tol_power * budget {
        return Err(BisectionError::Tolerance { power: p_hi, budget });
    }
    Ok(BisectionOutcome { lambda: hi, power: p_hi, budget, unconstrained_power: p_lo, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inactive_constraint() {
        let out = bisect_multiplier(|_| 0.5, 1.0, &BisectionSpec::default()).unwrap();
        assert_eq!(out.lambda, 0.0);
        assert_eq!(out.power, 0.5);
    }

    #[test]
    fn scalar_model_hits_one() {
        let out = bisect_multiplier(|l| 4.0 / (1.0 + l).powi(2), 1.0, &BisectionSpec::default()).unwrap();
        assert!((out.lambda - 1.0).abs() < 1e-8);
        assert!(out.relative_gap() <= 1e-8);
        assert!(out.complementarity().abs() <= 1e-8 * out.lambda);
    }

    #[test]
    fn large_multiplier_needs_doublings() {
        // power(λ) = 1/(λ+1e-3)², budget 1e-10 → λ* ≈ 1e5
        let out = bisect_multiplier(|l| 1.0 / (l + 1e-3).powi(2), 1e-10, &BisectionSpec::default()).unwrap();
        assert!((out.lambda - (1e5 - 1e-3)).abs() / 1e5 < 1e-8);
        assert!(out.relative_gap() <= 1e-8);
    }

    #[test]
    fn unbounded_at_zero_is_fine() {
        let out = bisect_multiplier(|l| if l == 0.0 { f64::INFINITY } else { 9.0 / (l * l) }, 1.0, &BisectionSpec::default()).unwrap();
        assert!((out.lambda - 3.0).abs() < 1e-8);
    }

    #[test]
    fn increasing_function_is_rejected() {
        let err = bisect_multiplier(|l| if l == 0.0 { 2.0 } else { 2.0 + l }, 1.0, &BisectionSpec::default());
        assert!(matches!(err, Err(BisectionError::BracketFailure { .. }) | Err(BisectionError::NonMonotone { .. })));
    }

    #[test]
    fn bracket_failure() {
        let spec = BisectionSpec { max_doublings: 3, ..BisectionSpec::default() };
        let err = bisect_multiplier(|l| 1.0 / (1.0 + l), 1e-6, &spec);
        assert!(matches!(err, Err(BisectionError::BracketFailure { .. })));
    }
}
