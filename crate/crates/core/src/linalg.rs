//! Small dense linear-algebra helpers shared by the solvers and the learner.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute asymmetry `max |m[i,j] - m[j,i]|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `sqrt(gamma) * rho(a)`; the discounted closed loop is stable iff this is below one.
pub fn discounted_radius(a: &DMatrix<f64>, gamma: f64) -> f64 {
    gamma.sqrt() * spectral_radius(a)
}

/// Solves `m x = b` by LU, reporting `what` on singularity.
pub fn solve(m: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    let lu = m.clone().lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::SingularMatrix(what.to_string()))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularMatrix(what.to_string()))
    }
}

pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    solve(m, &DMatrix::identity(m.nrows(), m.nrows()), what)
}

/// Quadratic form `x' m x`.
pub fn quad(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Solves the discounted Lyapunov equation `P = S + gamma a' P a`.
///
/// Fixed-point iteration from zero first; falls back to the direct solve of the
/// vectorized equation when the iteration budget runs out. Returns the solution
/// and its Frobenius residual.
pub fn discounted_lyapunov(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    gamma: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(DMatrix<f64>, f64)> {
    let radius = discounted_radius(a, gamma);
    if radius.is_nan() || radius >= 1.0 {
        return Err(Error::UnstableClosedLoop(radius));
    }
    let at = a.transpose();
    let mut p = DMatrix::zeros(a.nrows(), a.nrows());
    let mut converged = false;
    for _ in 0..max_iters {
        let next = symmetrize(&(s + (&at * &p * a) * gamma));
        let delta = (&next - &p).norm();
        p = next;
        if delta <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        p = lyapunov_direct(a, s, gamma)?;
    }
    let residual = lyapunov_residual(a, s, gamma, &p);
    Ok((p, residual))
}

/// Direct solve of `(I - gamma a' (x) a') vec(P) = vec(S)`.
pub fn lyapunov_direct(a: &DMatrix<f64>, s: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let at = a.transpose();
    let lhs = DMatrix::identity(n * n, n * n) - at.kronecker(&at) * gamma;
    let rhs = DMatrix::from_column_slice(n * n, 1, s.as_slice());
    let vec_p = solve(&lhs, &rhs, "vectorized Lyapunov equation")?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, vec_p.as_slice())))
}

pub fn lyapunov_residual(a: &DMatrix<f64>, s: &DMatrix<f64>, gamma: f64, p: &DMatrix<f64>) -> f64 {
    (p - s - (a.transpose() * p * a) * gamma).norm()
}

/// Min-norm least-squares solve of `m x = b` through the SVD.
pub fn lstsq(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = (smax * 1e-12).max(f64::MIN_POSITIVE);
    svd.solve(b, eps)
        .map_err(|e| Error::SingularMatrix(format!("least-squares solve ({e})")))
}

/// Numerical rank at relative threshold `rtol` of the largest singular value.
pub fn rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * smax).count()
}
