//! Sparse symmetric solves and the dense generalized eigensolver.
//!
//! Residuals reported in [`SolveReport`] are always recomputed from the
//! returned solution as `‖b - A x‖ / ‖b‖`, never taken from the iteration.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparse::{axpy, dot, norm2, SparseSymMatrix};

/// Upper bound for dense factorizations.
pub const DENSE_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    ConjugateGradient,
    Minres,
    SparseLu,
}

impl SolveMethod {
    pub fn is_direct(self) -> bool {
        matches!(self, Self::SparseLu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub method: SolveMethod,
}

enum CgOutcome {
    Converged(usize),
    Indefinite,
    Stalled(usize),
}

fn relative_residual(a: &SparseSymMatrix, x: &[f64], b: &[f64], bnorm: f64) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    norm2(&r) / bnorm
}

fn jacobi(a: &SparseSymMatrix) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d.abs() > 0.0 { 1.0 / d.abs() } else { 1.0 })
        .collect()
}

/// Jacobi-preconditioned conjugate gradients from the current `x`.
fn cg(
    a: &SparseSymMatrix,
    b: &[f64],
    x: &mut [f64],
    inv_diag: &[f64],
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = b.len();
    let bnorm = norm2(b);
    let mut r: Vec<f64> = {
        let ax = a.mul_vec(x);
        b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
    };
    if norm2(&r) <= tol * bnorm {
        return CgOutcome::Converged(0);
    }
    if inv_diag.iter().zip(a.diagonal()).any(|(_, d)| d <= 0.0) {
        return CgOutcome::Indefinite;
    }
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return CgOutcome::Indefinite;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        if norm2(&r) <= tol * bnorm {
            return CgOutcome::Converged(it);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome::Stalled(max_iter)
}

/// Preconditioned MINRES (Paige and Saunders) from the current `x`. The
/// preconditioner `inv_diag` must be positive.
fn minres(
    a: &SparseSymMatrix,
    b: &[f64],
    x: &mut [f64],
    inv_diag: &[f64],
    tol: f64,
    max_iter: usize,
) -> usize {
    let n = b.len();
    let mut r1: Vec<f64> = {
        let ax = a.mul_vec(x);
        b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
    };
    let mut y: Vec<f64> = r1.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let beta1 = dot(&r1, &y).sqrt();
    if beta1 == 0.0 {
        return 0;
    }
    let mut r2 = r1.clone();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    for it in 1..=max_iter {
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        a.mul_vec_into(&v, &mut y);
        if it >= 2 {
            axpy(-beta / oldb, &r1, &mut y);
        }
        let alfa = dot(&v, &y);
        axpy(-alfa / beta, &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        for i in 0..n {
            y[i] = r2[i] * inv_diag[i];
        }
        oldb = beta;
        beta = dot(&r2, &y).max(0.0).sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let denom = 1.0 / gamma;
        for i in 0..n {
            let w1 = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1 - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        // phibar tracks the preconditioned residual norm.
        if phibar <= 0.1 * tol * beta1 || beta == 0.0 {
            return it;
        }
    }
    max_iter
}

/// Solves `A x = b` for symmetric `A` to `‖A x - b‖ ≤ tol ‖b‖`.
///
/// Conjugate gradients run first; on detected indefiniteness the solve
/// switches to MINRES, and a dense LU factorization is the last resort for
/// systems small enough to densify.
pub fn solve_sparse_symmetric(
    a: &SparseSymMatrix,
    b: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, SolveReport)> {
    solve_sparse_symmetric_from(a, b, None, tol)
}

/// Same as [`solve_sparse_symmetric`] starting from an initial guess.
pub fn solve_sparse_symmetric_from(
    a: &SparseSymMatrix,
    b: &[f64],
    guess: Option<&[f64]>,
    tol: f64,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                residual: 0.0,
                method: SolveMethod::ConjugateGradient,
            },
        ));
    }
    let max_iter = 20 * n + 100;
    let inv_diag = jacobi(a);
    let start = guess.map_or_else(|| vec![0.0; n], |g| g.to_vec());

    // CG with a few residual-replacement restarts.
    let mut x = start.clone();
    let mut iterations = 0;
    let mut indefinite = false;
    let mut stalled = false;
    for _ in 0..4 {
        match cg(a, b, &mut x, &inv_diag, tol, max_iter) {
            CgOutcome::Converged(it) => iterations += it,
            CgOutcome::Indefinite => {
                indefinite = true;
                break;
            }
            CgOutcome::Stalled(it) => {
                iterations += it;
                stalled = true;
            }
        }
        let residual = relative_residual(a, &x, b, bnorm);
        if residual <= tol {
            return Ok((
                x,
                SolveReport {
                    iterations,
                    residual,
                    method: SolveMethod::ConjugateGradient,
                },
            ));
        }
        if stalled {
            break;
        }
    }
    log::debug!("CG did not finish (indefinite: {indefinite}); switching to sparse LU");

    let mut residual = f64::INFINITY;
    match sparse_lu_solve(a, b) {
        Some(x) => {
            let res = relative_residual(a, &x, b, bnorm);
            if res <= tol {
                return Ok((
                    x,
                    SolveReport {
                        iterations: 1,
                        residual: res,
                        method: SolveMethod::SparseLu,
                    },
                ));
            }
            log::debug!("sparse LU residual {res:e} above {tol:e}; trying MINRES");
            residual = res;
        }
        None => log::debug!("sparse LU failed; trying MINRES"),
    }

    let mut x = start;
    let iterations = minres(a, b, &mut x, &inv_diag, tol, max_iter);
    let res = relative_residual(a, &x, b, bnorm);
    if res <= tol {
        return Ok((
            x,
            SolveReport {
                iterations,
                residual: res,
                method: SolveMethod::Minres,
            },
        ));
    }
    residual = residual.min(res);
    Err(Error::SolveFailed {
        method: "sparse symmetric",
        iterations,
        residual,
        tolerance: tol,
    })
}

/// Sparse LU with fill-reducing ordering and one step of iterative
/// refinement. `None` if the factorization breaks down.
fn sparse_lu_solve(a: &SparseSymMatrix, b: &[f64]) -> Option<Vec<f64>> {
    use faer::prelude::SpSolver;

    let n = a.dim();
    let pattern = a.pattern();
    let mut triplets = Vec::with_capacity(a.values().len());
    let mut pos = 0;
    for i in 0..n {
        for &j in pattern.row(i) {
            triplets.push((i, j, a.values()[pos]));
            pos += 1;
        }
    }
    let mat = faer::sparse::SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets).ok()?;
    let lu = mat.sp_lu().ok()?;
    let solve = |rhs: &[f64]| -> Vec<f64> {
        let mut col = faer::Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        lu.solve_in_place(col.as_mut());
        (0..n).map(|i| col.read(i, 0)).collect()
    };
    let mut x = solve(b);
    let ax = a.mul_vec(&x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let dx = solve(&r);
    axpy(1.0, &dx, &mut x);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Conjugate gradients for a matrix known to be SPD.
pub fn solve_spd(
    a: &SparseSymMatrix,
    b: &[f64],
    guess: Option<&[f64]>,
    tol: f64,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    let bnorm = norm2(b);
    let mut x = guess.map_or_else(|| vec![0.0; n], |g| g.to_vec());
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                residual: 0.0,
                method: SolveMethod::ConjugateGradient,
            },
        ));
    }
    let inv_diag = jacobi(a);
    let max_iter = 20 * n + 100;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for _ in 0..4 {
        match cg(a, b, &mut x, &inv_diag, tol, max_iter) {
            CgOutcome::Converged(it) | CgOutcome::Stalled(it) => iterations += it,
            CgOutcome::Indefinite => {
                return Err(Error::NotPositiveDefinite(
                    "conjugate gradients met a non-positive curvature direction".into(),
                ))
            }
        }
        residual = relative_residual(a, &x, b, bnorm);
        if residual <= tol {
            return Ok((
                x,
                SolveReport {
                    iterations,
                    residual,
                    method: SolveMethod::ConjugateGradient,
                },
            ));
        }
    }
    Err(Error::SolveFailed {
        method: "conjugate gradient",
        iterations,
        residual,
        tolerance: tol,
    })
}

/// Eigenpairs of `A v = λ M v`.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `i` pairs with `values[i]`; columns are M-orthonormal.
    pub vectors: DMatrix<f64>,
}

/// Dense symmetric-definite generalized eigenproblem via Cholesky reduction
/// `L⁻¹ A L⁻ᵀ` of `M = L Lᵀ`.
pub fn dense_generalized_eig(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<GeneralizedEigen> {
    let n = a.nrows();
    if a.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: m.nrows(),
        });
    }
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge {
            dimension: n,
            limit: DENSE_LIMIT,
        });
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization of M failed".into()))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut y = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        y.set_column(col, &eig.eigenvectors.column(i));
    }
    let vectors = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    Ok(GeneralizedEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_1d(n: usize, shift: f64) -> SparseSymMatrix {
        let mut e = Vec::new();
        for i in 0..n {
            e.push((i, i, 2.0 + shift));
            if i + 1 < n {
                e.push((i, i + 1, -1.0));
            }
        }
        SparseSymMatrix::from_entries(n, &e).unwrap()
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = laplacian_1d(10, 0.0);
        let (x, rep) = solve_sparse_symmetric(&a, &[0.0; 10], 1e-12).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
        assert_eq!(rep.residual, 0.0);
    }

    #[test]
    fn random_spd_system_meets_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let mut entries = Vec::new();
        for i in 0..n {
            entries.push((i, i, 60.0 + rng.random::<f64>()));
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                if j != i {
                    entries.push((i, j, rng.random::<f64>() - 0.5));
                }
            }
        }
        let a = SparseSymMatrix::from_entries(n, &entries).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let (x, rep) = solve_sparse_symmetric(&a, &b, 1e-12).unwrap();
        assert_eq!(rep.method, SolveMethod::ConjugateGradient);
        let r: Vec<f64> = b.iter().zip(a.mul_vec(&x)).map(|(bi, ai)| bi - ai).collect();
        assert!(norm2(&r) <= 1e-12 * norm2(&b));
        assert!((rep.residual - norm2(&r) / norm2(&b)).abs() < 1e-20);
    }

    #[test]
    fn indefinite_system_falls_back_to_direct_solve() {
        // Shifted Laplacian with eigenvalues on both sides of zero.
        let a = laplacian_1d(40, -1.5);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let (x, rep) = solve_sparse_symmetric(&a, &b, 1e-12).unwrap();
        assert_eq!(rep.method, SolveMethod::SparseLu);
        assert!(rep.method.is_direct());
        assert!(relative_residual(&a, &x, &b, norm2(&b)) <= 1e-12);
    }

    #[test]
    fn minres_handles_indefinite_system() {
        let a = laplacian_1d(30, -1.2);
        let b: Vec<f64> = (0..30).map(|i| (i as f64 * 0.71).cos()).collect();
        let mut x = vec![0.0; 30];
        minres(&a, &b, &mut x, &jacobi(&a), 1e-10, 10_000);
        assert!(relative_residual(&a, &x, &b, norm2(&b)) <= 1e-9);
    }

    #[test]
    fn spd_solver_rejects_indefinite() {
        let a = laplacian_1d(10, -3.0);
        assert!(matches!(
            solve_spd(&a, &[1.0; 10], None, 1e-10),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn generalized_eig_of_identical_pair_is_one() {
        let m = laplacian_1d(6, 1.0).to_dense();
        let eig = dense_generalized_eig(&m, &m).unwrap();
        for v in eig.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_problem_sorts_eigenvalues() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -1.0, 2.0]));
        let eig = dense_generalized_eig(&a, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(eig.values, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn generalized_eig_residuals_and_orthonormality() {
        let a = laplacian_1d(30, 0.0).to_dense();
        let m = laplacian_1d(30, 4.0).to_dense() / 6.0;
        let eig = dense_generalized_eig(&a, &m).unwrap();
        let anorm = a.norm();
        for (i, &lam) in eig.values.iter().enumerate() {
            let v = eig.vectors.column(i);
            let r = &a * v - (&m * v) * lam;
            assert!(r.norm() <= 1e-10 * anorm);
        }
        let gram = eig.vectors.transpose() * &m * &eig.vectors;
        let dev = (gram - DMatrix::identity(30, 30)).abs().max();
        assert!(dev <= 1e-10);
    }

    #[test]
    fn non_spd_mass_is_rejected() {
        let a = DMatrix::identity(2, 2);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            dense_generalized_eig(&a, &m),
            Err(Error::NotPositiveDefinite(_))
        ));
    }
}
