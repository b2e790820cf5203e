//! O'Sullivan penalized spline bases.
//!
//! A cubic B-spline basis on the knots is rotated and scaled so that the
//! roughness penalty `∫ f''(x)² dx` becomes an identity penalty on the
//! spline coefficients. The linear part of `f` lies in the null space of the
//! penalty and is carried by the fixed and random linear terms of the models,
//! so the returned `Z` has two fewer columns than there are B-splines.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEGREE: usize = 3;

// Three-point Gauss–Legendre rule on [-1, 1]. B'' is piecewise linear, so
// this integrates the penalty exactly.
const GL_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Interior knots at the `k/(K+1)` quantiles of the distinct values of `x`.
pub fn default_knots(x: &[f64], n_interior: usize) -> Result<Vec<f64>> {
    if n_interior == 0 {
        return Err(Error::InvalidInput("need at least one interior knot".into()));
    }
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("covariate value {bad}")));
    }
    let mut u = x.to_vec();
    u.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    u.dedup();
    if u.len() < n_interior + 2 {
        return Err(Error::TooFewDistinctValues { needed: n_interior + 2, found: u.len() });
    }
    let last = (u.len() - 1) as f64;
    Ok((1..=n_interior)
        .map(|k| {
            let h = last * k as f64 / (n_interior + 1) as f64;
            let lo = h.floor() as usize;
            let frac = h - lo as f64;
            if lo + 1 < u.len() {
                u[lo] + frac * (u[lo + 1] - u[lo])
            } else {
                u[lo]
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplineBasisSpec {
    interior_knots: Vec<f64>,
    boundary: (f64, f64),
}

/// A fitted O'Sullivan basis. Only the knots and boundary are serialized; the
/// transform is recomputed on load, which is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineBasisSpec", into = "SplineBasisSpec")]
pub struct SplineBasis {
    interior_knots: Vec<f64>,
    boundary: (f64, f64),
    knots: Vec<f64>,
    transform: DMatrix<f64>,
}

impl TryFrom<SplineBasisSpec> for SplineBasis {
    type Error = Error;
    fn try_from(s: SplineBasisSpec) -> Result<Self> {
        SplineBasis::new(s.interior_knots, s.boundary)
    }
}

impl From<SplineBasis> for SplineBasisSpec {
    fn from(b: SplineBasis) -> Self {
        SplineBasisSpec { interior_knots: b.interior_knots, boundary: b.boundary }
    }
}

impl SplineBasis {
    pub fn new(interior_knots: Vec<f64>, boundary: (f64, f64)) -> Result<Self> {
        let (a, b) = boundary;
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidInput(format!("invalid spline boundary ({a}, {b})")));
        }
        if interior_knots.is_empty() {
            return Err(Error::InvalidInput("need at least one interior knot".into()));
        }
        let mut prev = a;
        for &k in &interior_knots {
            if !(k > prev) {
                return Err(Error::InvalidInput(format!(
                    "interior knots must increase strictly inside ({a}, {b})"
                )));
            }
            prev = k;
        }
        if !(prev < b) {
            return Err(Error::InvalidInput(format!("interior knot {prev} is not below {b}")));
        }

        let mut knots = vec![a; DEGREE + 1];
        knots.extend_from_slice(&interior_knots);
        knots.extend(std::iter::repeat(b).take(DEGREE + 1));

        let omega = penalty_matrix(&knots);
        let nb = omega.nrows();
        let eig = SymmetricEigen::new(omega);
        let mut order: Vec<usize> = (0..nb).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).expect("finite"));
        let k = nb - 2;
        let mut transform = DMatrix::zeros(nb, k);
        for (c, &idx) in order.iter().take(k).enumerate() {
            let d = eig.eigenvalues[idx];
            if !(d > 0.0) {
                return Err(Error::Singular(format!("spline penalty eigenvalue {d} is not positive")));
            }
            let mut v = eig.eigenvectors.column(idx).into_owned();
            // Eigenvectors are only defined up to sign; fix it so the basis
            // does not depend on the eigensolver's choice.
            let imax = v.iamax();
            if v[imax] < 0.0 {
                v = -v;
            }
            transform.set_column(c, &(v / d.sqrt()));
        }

        Ok(Self { interior_knots, boundary, knots, transform })
    }

    /// Basis with `n_cols` columns, knots from [`default_knots`] and the
    /// boundary widened slightly past the data range.
    pub fn from_data(x: &[f64], n_cols: usize) -> Result<Self> {
        if n_cols < 3 {
            return Err(Error::InvalidInput(format!("a spline basis needs at least 3 columns, got {n_cols}")));
        }
        let knots = default_knots(x, n_cols - 2)?;
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-8 * (hi - lo);
        Self::new(knots, (lo - slack, hi + slack))
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    /// Number of columns of `Z`.
    pub fn n_cols(&self) -> usize {
        self.transform.ncols()
    }

    /// Number of underlying cubic B-splines.
    pub fn n_bsplines(&self) -> usize {
        self.transform.nrows()
    }

    fn check_range(&self, x: f64) -> Result<()> {
        let (a, b) = self.boundary;
        if x.is_nan() || x < a || x > b {
            return Err(Error::OutOfRange { x, lo: a, hi: b });
        }
        Ok(())
    }

    /// Raw cubic B-spline design matrix.
    pub fn bspline_design(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let nb = self.n_bsplines();
        let mut out = DMatrix::zeros(x.len(), nb);
        for (r, &xv) in x.iter().enumerate() {
            self.check_range(xv)?;
            let vals = bspline_values(&self.knots, DEGREE, xv);
            for (c, v) in vals.into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        Ok(out)
    }

    /// `Ω_kl = ∫ B_k''(x) B_l''(x) dx` over the boundary interval.
    pub fn penalty(&self) -> DMatrix<f64> {
        penalty_matrix(&self.knots)
    }

    /// The O'Sullivan design matrix `Z` (n × K).
    pub fn evaluate(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.bspline_design(x)? * &self.transform)
    }

    /// A single row of `Z`.
    pub fn evaluate_one(&self, x: f64) -> Result<DVector<f64>> {
        self.check_range(x)?;
        let b = DVector::from_vec(bspline_values(&self.knots, DEGREE, x));
        Ok(self.transform.tr_mul(&b))
    }
}

/// Index `j` of the knot interval `[t_j, t_{j+1})` containing `x`; the right
/// boundary falls into the last nonempty interval.
fn span(t: &[f64], x: f64) -> usize {
    let last = t.len() - 1;
    let b = t[last];
    if x >= b {
        let mut j = last - 1;
        while t[j] >= b {
            j -= 1;
        }
        return j;
    }
    // Largest j with t_j <= x.
    let mut j = 0;
    while j + 1 < t.len() && t[j + 1] <= x {
        j += 1;
    }
    j
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// All `len(t) - degree - 1` B-splines of the given degree at `x`.
fn bspline_values(t: &[f64], degree: usize, x: f64) -> Vec<f64> {
    let j0 = span(t, x);
    let mut b = vec![0.0; t.len() - 1];
    b[j0] = 1.0;
    for k in 1..=degree {
        let n = t.len() - k - 1;
        let mut next = vec![0.0; n];
        for (j, v) in next.iter_mut().enumerate() {
            *v = ratio(x - t[j], t[j + k] - t[j]) * b[j] + ratio(t[j + k + 1] - x, t[j + k + 1] - t[j + 1]) * b[j + 1];
        }
        b = next;
    }
    b
}

/// Second derivatives of the cubic B-splines at `x`.
fn bspline_second_derivatives(t: &[f64], x: f64) -> Vec<f64> {
    let b1 = bspline_values(t, 1, x);
    let n2 = t.len() - 3;
    let d2: Vec<f64> = (0..n2)
        .map(|j| 2.0 * (ratio(b1[j], t[j + 2] - t[j]) - ratio(b1[j + 1], t[j + 3] - t[j + 1])))
        .collect();
    let n3 = t.len() - 4;
    (0..n3)
        .map(|j| 3.0 * (ratio(d2[j], t[j + 3] - t[j]) - ratio(d2[j + 1], t[j + 4] - t[j + 1])))
        .collect()
}

fn penalty_matrix(t: &[f64]) -> DMatrix<f64> {
    let nb = t.len() - DEGREE - 1;
    let mut omega = DMatrix::zeros(nb, nb);
    for w in t.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if !(hi > lo) {
            continue;
        }
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let d = bspline_second_derivatives(t, mid + half * node);
            for k in 0..nb {
                if d[k] == 0.0 {
                    continue;
                }
                for l in 0..nb {
                    omega[(k, l)] += weight * half * d[k] * d[l];
                }
            }
        }
    }
    omega
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_quantiles() {
        let x: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let k = default_knots(&x, 3).unwrap();
        for (a, b) in k.iter().zip([0.25, 0.5, 0.75]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_value_is_rejected() {
        assert!(matches!(
            default_knots(&[1.0; 10], 2),
            Err(Error::TooFewDistinctValues { needed: 4, found: 1 })
        ));
    }

    #[test]
    fn partition_of_unity() {
        let basis = SplineBasis::new(vec![0.2, 0.5, 0.7], (0.0, 1.0)).unwrap();
        for x in [0.0, 0.1, 0.2, 0.33, 0.7, 0.99, 1.0] {
            let b = basis.bspline_design(&[x]).unwrap();
            assert!((b.sum() - 1.0).abs() < 1e-14, "x = {x}");
        }
    }

    #[test]
    fn penalty_annihilates_lines() {
        let basis = SplineBasis::new(vec![0.3, 0.6], (0.0, 1.0)).unwrap();
        // Greville abscissae reproduce x exactly.
        let t = &basis.knots;
        let g = DVector::from_fn(basis.n_bsplines(), |j, _| (t[j + 1] + t[j + 2] + t[j + 3]) / 3.0);
        let omega = basis.penalty();
        assert!((&omega * &g).amax() < 1e-10);
        assert!((&omega * DVector::from_element(basis.n_bsplines(), 1.0)).amax() < 1e-10);
    }

    #[test]
    fn out_of_range() {
        let basis = SplineBasis::new(vec![0.5], (0.0, 1.0)).unwrap();
        assert!(matches!(basis.evaluate(&[1.5]), Err(Error::OutOfRange { .. })));
        assert_eq!(basis.n_cols(), 3);
    }
}
