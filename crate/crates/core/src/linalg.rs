//! Small dense linear-algebra helpers shared by the filters and fusion rules.

use nalgebra::{Cholesky, DMatrix, Dyn, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Jitter added to the diagonal when a covariance fails its first Cholesky attempt.
pub const JITTER: f64 = 1e-12;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrizes `m` and returns it with its Cholesky factor.
///
/// A failed factorization is retried once with `JITTER * I` added; a second
/// failure is reported as not positive definite.
pub fn condition(m: &DMatrix<f64>, what: &'static str) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    let sym = symmetrize(m);
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(what));
    }
    if let Some(ch) = Cholesky::new(sym.clone()) {
        return Ok((sym, ch));
    }
    let n = sym.nrows();
    let jittered = sym + DMatrix::identity(n, n) * JITTER;
    match Cholesky::new(jittered.clone()) {
        Some(ch) => Ok((jittered, ch)),
        None => Err(Error::NotPositiveDefinite(what)),
    }
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let ch = Cholesky::new(symmetrize(m)).ok_or(Error::NotPositiveDefinite(what))?;
    Ok(symmetrize(&ch.inverse()))
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite()) && Cholesky::new(symmetrize(m)).is_some()
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Nearest rotation to `m` in the Frobenius sense (polar factor).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Block-diagonal matrix `diag(a, b)`.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((n, n), (m, m)).copy_from(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skew_roundtrip() {
        let v = Vector3::new(0.3, -1.2, 2.0);
        assert_eq!(unskew(&skew(&v)), v);
        let w = Vector3::new(-0.5, 0.1, 0.7);
        assert!((skew(&v) * w - v.cross(&w)).norm() < 1e-15);
    }

    #[test]
    fn condition_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(condition(&m, "test"), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn condition_accepts_psd_with_jitter() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (c, _) = condition(&m, "test").unwrap();
        assert!((c[(0, 0)] - 1.0 - JITTER).abs() < 1e-15);
    }

    #[test]
    fn orthonormalize_projects_drifted_rotation() {
        let mut r = Matrix3::identity();
        r[(0, 1)] = 1e-3;
        let q = orthonormalize(&r);
        assert!((q.transpose() * q - Matrix3::identity()).norm() < 1e-14);
        assert!((q.determinant() - 1.0).abs() < 1e-14);
    }
}
