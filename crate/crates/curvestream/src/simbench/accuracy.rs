//! Accuracy of an approximate density against a reference:
//! `100 (1 − ½ ∫ |q − p|)`, by the trapezoidal rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Density values on an increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedDensity {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
}

impl GriddedDensity {
    pub fn from_fn(x: &[f64], f: impl Fn(f64) -> f64) -> Self {
        Self { x: x.to_vec(), f: x.iter().map(|&v| f(v)).collect() }
    }
}

/// Trapezoidal integral of `f` over `x`.
pub fn trapezoid(x: &[f64], f: &[f64]) -> f64 {
    x.windows(2).zip(f.windows(2)).map(|(xs, fs)| 0.5 * (xs[1] - xs[0]) * (fs[0] + fs[1])).sum()
}

const NORMALIZATION_TOL: f64 = 1e-3;

fn check(d: &GriddedDensity) -> Result<()> {
    if d.x.len() != d.f.len() || d.x.len() < 2 {
        return Err(Error::GridMismatch("a density needs one value per grid point and at least two points".into()));
    }
    if d.x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridMismatch("grid must be strictly increasing".into()));
    }
    if d.f.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("density values must be finite and nonnegative".into()));
    }
    let total = trapezoid(&d.x, &d.f);
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized(total));
    }
    Ok(())
}

/// Percentage accuracy of `q` as an approximation to `p`. Both must share
/// the grid.
pub fn accuracy(q: &GriddedDensity, p: &GriddedDensity) -> Result<f64> {
    if q.x != p.x {
        return Err(Error::GridMismatch("the two densities use different grids".into()));
    }
    check(q)?;
    check(p)?;
    let diff: Vec<f64> = q.f.iter().zip(&p.f).map(|(a, b)| (a - b).abs()).collect();
    Ok(100.0 * (1.0 - 0.5 * trapezoid(&q.x, &diff)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_on_lines() {
        let x = [0.0, 0.5, 2.0];
        assert!((trapezoid(&x, &[1.0, 2.0, 5.0]) - 6.0).abs() < 1e-15);
    }
}
