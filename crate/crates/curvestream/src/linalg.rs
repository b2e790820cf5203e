//! Small dense helpers shared across modules.

use faer::linalg::solvers::DenseSolveCore;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Replace `a` by `(a + aᵀ)/2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Inverse and log-determinant of a symmetric positive definite matrix.
///
/// Goes through a blocked Cholesky factorization, which keeps the dense
/// baseline usable at a few thousand columns.
pub fn spd_inverse_logdet(a: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!("{what}: {}x{} is not square", n, a.ncols())));
    }
    let fa = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let llt = fa
        .llt(faer::Side::Lower)
        .map_err(|_| Error::Singular(format!("{what} ({n}x{n}) has no Cholesky factor")))?;
    let l = llt.L();
    let mut logdet = 0.0;
    for k in 0..n {
        logdet += 2.0 * l[(k, k)].ln();
    }
    let inv = llt.inverse();
    let mut out = DMatrix::from_fn(n, n, |i, j| inv[(i, j)]);
    symmetrize(&mut out);
    Ok((out, logdet))
}

/// Trace of `aᵀ b` for equally shaped matrices, i.e. the elementwise dot product.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Maximum absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Relative difference `‖a − b‖_max / max(‖b‖_max, floor)`.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = max_abs(b).max(1e-300);
    max_abs(&(a - b)) / scale
}

/// Relative difference for vectors.
pub fn rel_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = b.amax().max(1e-300);
    (a - b).amax() / scale
}

/// Check every entry is finite.
pub fn ensure_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn ensure_finite_scalar(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
