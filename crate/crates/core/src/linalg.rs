//! Complex matrix kernels shared by the rest of the crate.
//!
//! Hermitian positive-definite matrices (received covariances, MMSE matrices,
//! the regularized surrogate curvature) are always handled through a lower
//! triangular factor `F` with `F Fᴴ = A`. Determinants and inverses go through
//! that factor. SVD and Hermitian eigendecompositions are delegated to
//! `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

/// Dense complex matrix. Entries are double-precision complex numbers.
pub type CMatrix = DMatrix<Complex64>;

/// Relative asymmetry accepted by [`hpd_factorize`].
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Default relative rank cutoff for [`null_space_basis`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (relative asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected} rows, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("SVD did not converge")]
    ConvergenceFailure,
    #[error("matrix has full column rank; null space is empty")]
    EmptyNullSpace,
}

/// Lower-triangular factor of a Hermitian positive-definite matrix.
#[derive(Debug, Clone)]
pub struct HpdFactor {
    lower: CMatrix,
}

impl HpdFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &CMatrix {
        &self.lower
    }

    /// Rebuilds `F Fᴴ`.
    pub fn reconstruct(&self) -> CMatrix {
        &self.lower * self.lower.adjoint()
    }

    /// `A⁻¹` for the factored matrix.
    pub fn inverse(&self) -> CMatrix {
        let n = self.dim();
        // Dimension always matches.
        hpd_solve(self, &CMatrix::identity(n, n)).expect("square identity solve")
    }
}

/// Frobenius norm of `A - Aᴴ` relative to `max(1, ‖A‖_F)`.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let scale = a.norm().max(1.0);
    (a - a.adjoint()).norm() / scale
}

/// Returns `(A + Aᴴ)/2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Cholesky factorization of `A + jitter·I`.
pub fn hpd_factorize(a: &CMatrix, jitter: f64) -> Result<HpdFactor, LinalgError> {
    let (n, m) = a.shape();
    if n != m {
        return Err(LinalgError::NotSquare(n, m));
    }
    let defect = hermitian_defect(a);
    if defect > HERMITIAN_TOL {
        return Err(LinalgError::NotHermitian(defect));
    }
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)].re + jitter;
        for k in 0..j {
            diag -= l[(j, k)].norm_sqr();
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot: diag });
        }
        let d = diag.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in (j + 1)..n {
            // use the lower triangle of A, averaged with the upper to stay Hermitian
            let mut s = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(HpdFactor { lower: l })
}

/// Solves `(F Fᴴ) X = B`.
pub fn hpd_solve(f: &HpdFactor, b: &CMatrix) -> Result<CMatrix, LinalgError> {
    let n = f.dim();
    if b.nrows() != n {
        return Err(LinalgError::DimensionMismatch { expected: n, got: b.nrows() });
    }
    let l = &f.lower;
    let mut x = b.clone();
    for c in 0..x.ncols() {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // backward: Lᴴ x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)].conj() * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)].conj();
        }
    }
    Ok(x)
}

/// Natural-log determinant of the factored matrix, `2 Σ log F_jj`.
pub fn logdet_hpd(f: &HpdFactor) -> f64 {
    2.0 * f.lower.diagonal().iter().map(|d| d.re.ln()).sum::<f64>()
}

/// Thin singular value decomposition.
#[derive(Debug, Clone)]
pub struct Svd {
    pub left: CMatrix,
    pub singular_values: Vec<f64>,
    pub right: CMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> CMatrix {
        let k = self.singular_values.len();
        let mut scaled = self.left.clone();
        for (j, s) in self.singular_values.iter().enumerate().take(k) {
            scaled.column_mut(j).scale_mut(*s);
        }
        scaled * self.right.adjoint()
    }
}

/// `A = left · diag(singular_values) · rightᴴ`, singular values nonincreasing.
pub fn svd(a: &CMatrix) -> Result<Svd, LinalgError> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Svd {
            left: CMatrix::zeros(m, 0),
            singular_values: Vec::new(),
            right: CMatrix::zeros(n, 0),
        });
    }
    let dec = a
        .clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or(LinalgError::ConvergenceFailure)?;
    let u = dec.u.ok_or(LinalgError::ConvergenceFailure)?;
    let v_t = dec.v_t.ok_or(LinalgError::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]));
    let mut left = CMatrix::zeros(m, k);
    let mut right = CMatrix::zeros(n, k);
    let mut singular_values = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        singular_values.push(dec.singular_values[src]);
        left.set_column(dst, &u.column(src));
        right.set_column(dst, &v_t.row(src).adjoint());
    }
    Ok(Svd { left, singular_values, right })
}

/// Orthonormal basis of the right null space of `A`.
///
/// Singular values below `rank_tol · σ_max` are treated as zero. Wide inputs
/// are padded with zero rows so the SVD yields a full set of right vectors.
pub fn null_space_basis(a: &CMatrix, rank_tol: f64) -> Result<CMatrix, LinalgError> {
    let (m, n) = a.shape();
    if n == 0 {
        return Err(LinalgError::EmptyNullSpace);
    }
    if m == 0 {
        return Ok(CMatrix::identity(n, n));
    }
    let padded = if m < n {
        let mut p = CMatrix::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let dec = svd(&padded)?;
    let smax = dec.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = rank_tol * smax;
    let null_cols: Vec<usize> = dec
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax == 0.0 || s <= cutoff)
        .map(|(j, _)| j)
        .collect();
    if null_cols.is_empty() {
        return Err(LinalgError::EmptyNullSpace);
    }
    let mut basis = CMatrix::zeros(n, null_cols.len());
    for (dst, &src) in null_cols.iter().enumerate() {
        basis.set_column(dst, &dec.right.column(src));
    }
    Ok(basis)
}

/// Eigendecomposition `A = Q diag(values) Qᴴ` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

pub fn hermitian_eigen(a: &CMatrix) -> HermitianEigen {
    let dec = SymmetricEigen::new(hermitian_part(a));
    HermitianEigen {
        values: dec.eigenvalues.iter().copied().collect(),
        vectors: dec.eigenvectors,
    }
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    hermitian_eigen(a)
        .values
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Real part of `Tr(Aᴴ B)`, the real inner product on complex matrices.
pub fn inner_re(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Real part of the trace of a square matrix.
pub fn trace_re(a: &CMatrix) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Builds a real matrix from row-major values.
pub fn real_matrix(rows: usize, cols: usize, values: &[f64]) -> CMatrix {
    assert_eq!(values.len(), rows * cols);
    CMatrix::from_fn(rows, cols, |i, j| c64(values[i * cols + j], 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn gaussian(rng: &mut ChaCha20Rng, m: usize, n: usize) -> CMatrix {
        use rand_distr::StandardNormal;
        CMatrix::from_fn(m, n, |_, _| {
            c64(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
        })
    }

    fn random_hpd(rng: &mut ChaCha20Rng, n: usize) -> CMatrix {
        let g = gaussian(rng, n, n);
        &g * g.adjoint() + CMatrix::identity(n, n)
    }

    #[test]
    fn factor_of_identity_and_diagonal() {
        let f = hpd_factorize(&CMatrix::identity(2, 2), 0.0).unwrap();
        assert!((f.lower() - CMatrix::identity(2, 2)).norm() < 1e-15);
        let f = hpd_factorize(&real_matrix(2, 2, &[4.0, 0.0, 0.0, 9.0]), 0.0).unwrap();
        assert!((f.lower() - real_matrix(2, 2, &[2.0, 0.0, 0.0, 3.0])).norm() < 1e-15);
    }

    #[test]
    fn factor_reconstructs_random_hpd() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_hpd(&mut rng, 3);
            let f = hpd_factorize(&a, 0.0).unwrap();
            assert!((f.reconstruct() - &a).norm() / a.norm() < 1e-10);
            assert!(f.lower().diagonal().iter().all(|d| d.re > 0.0 && d.im == 0.0));
        }
    }

    #[test]
    fn factor_errors() {
        let a = CMatrix::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0), c64(1.0, 0.0)]);
        assert!(matches!(hpd_factorize(&a, 0.0), Err(LinalgError::NotHermitian(_))));
        let b = real_matrix(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            hpd_factorize(&b, 0.0),
            Err(LinalgError::NotPositiveDefinite { index: 1, .. })
        ));
        // jitter rescues a PSD matrix
        let z = real_matrix(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(hpd_factorize(&z, 0.0).is_err());
        assert!(hpd_factorize(&z, 1e-6).is_ok());
    }

    #[test]
    fn solve_cases() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let f = hpd_factorize(&CMatrix::identity(3, 3), 0.0).unwrap();
        let b = gaussian(&mut rng, 3, 2);
        assert!((hpd_solve(&f, &b).unwrap() - &b).norm() < 1e-15);

        let f = hpd_factorize(&real_matrix(1, 1, &[2.0]), 0.0).unwrap();
        let x = hpd_solve(&f, &real_matrix(1, 1, &[6.0])).unwrap();
        assert!((x[(0, 0)] - c64(3.0, 0.0)).norm() < 1e-15);

        for _ in 0..20 {
            let a = random_hpd(&mut rng, 4);
            let b = gaussian(&mut rng, 4, 3);
            let x = hpd_solve(&hpd_factorize(&a, 0.0).unwrap(), &b).unwrap();
            assert!((&a * &x - &b).norm() / b.norm() <= 1e-9);
        }

        let f = hpd_factorize(&CMatrix::identity(2, 2), 0.0).unwrap();
        assert_eq!(
            hpd_solve(&f, &CMatrix::zeros(3, 1)).unwrap_err(),
            LinalgError::DimensionMismatch { expected: 2, got: 3 }
        );
    }

    #[test]
    fn logdet_cases() {
        let f = hpd_factorize(&CMatrix::identity(3, 3), 0.0).unwrap();
        assert_eq!(logdet_hpd(&f), 0.0);
        let f = hpd_factorize(&real_matrix(2, 2, &[2.0, 0.0, 0.0, 3.0]), 0.0).unwrap();
        assert!((logdet_hpd(&f) - 6.0f64.ln()).abs() < 1e-14);
        assert!((logdet_hpd(&f) - 1.791759).abs() < 1e-6);

        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_hpd(&mut rng, 4);
            let eig: f64 = hermitian_eigen(&a).values.iter().map(|v| v.ln()).sum();
            let f = hpd_factorize(&a, 0.0).unwrap();
            assert!((logdet_hpd(&f) - eig).abs() < 1e-10);
            // log|A| + log|A⁻¹| = 0
            let inv = hermitian_part(&f.inverse());
            let g = hpd_factorize(&inv, 0.0).unwrap();
            assert!((logdet_hpd(&f) + logdet_hpd(&g)).abs() < 1e-8);
            // A A⁻¹ = I
            let x = hpd_solve(&f, &a).unwrap();
            assert!((x - CMatrix::identity(4, 4)).norm() < 1e-9);
        }
    }

    #[test]
    fn svd_cases() {
        let s = svd(&CMatrix::identity(2, 2)).unwrap();
        assert_eq!(s.singular_values.len(), 2);
        assert!(s.singular_values.iter().all(|v| (v - 1.0).abs() < 1e-14));

        let s = svd(&real_matrix(2, 2, &[0.0, 1.0, 0.0, 0.0])).unwrap();
        assert!((s.singular_values[0] - 1.0).abs() < 1e-14);
        assert!(s.singular_values[1].abs() < 1e-14);

        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for (m, n) in [(3, 5), (5, 3), (4, 4), (1, 3)] {
            let a = gaussian(&mut rng, m, n);
            let s = svd(&a).unwrap();
            assert!((s.reconstruct() - &a).norm() <= 1e-10 * a.norm().max(1.0));
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
            let k = m.min(n);
            let eye = CMatrix::identity(k, k);
            assert!((s.left.adjoint() * &s.left - &eye).norm() <= 1e-10);
            assert!((s.right.adjoint() * &s.right - &eye).norm() <= 1e-10);
        }
    }

    #[test]
    fn null_space_cases() {
        let z = CMatrix::zeros(1, 2);
        let r = null_space_basis(&z, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r.shape(), (2, 2));
        assert!((r.adjoint() * &r - CMatrix::identity(2, 2)).norm() < 1e-12);

        let a = real_matrix(1, 2, &[1.0, 0.0]);
        let r = null_space_basis(&a, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r.shape(), (2, 1));
        assert!((&a * &r).norm() < 1e-15);
        assert!((r[(1, 0)].norm() - 1.0).abs() < 1e-12);

        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = gaussian(&mut rng, 2, 4);
            let r = null_space_basis(&a, DEFAULT_RANK_TOL).unwrap();
            assert_eq!(r.shape(), (4, 2));
            assert!((&a * &r).norm() <= 1e-9);
            assert!((r.adjoint() * &r - CMatrix::identity(2, 2)).norm() <= 1e-9);
        }

        let full = gaussian(&mut rng, 3, 3);
        assert_eq!(null_space_basis(&full, DEFAULT_RANK_TOL).unwrap_err(), LinalgError::EmptyNullSpace);
    }

    #[test]
    fn inner_product_matches_trace() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let a = gaussian(&mut rng, 3, 2);
        let b = gaussian(&mut rng, 3, 2);
        let t = (a.adjoint() * &b).trace();
        assert!((inner_re(&a, &b) - t.re).abs() < 1e-12);
    }
}
