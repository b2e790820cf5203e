//! Inverse-χ² and Inverse G-Wishart containers and the moments the
//! variational updates consume.
//!
//! Parameterization: `x ~ Inverse-χ²(ξ, λ)` has density proportional to
//! `x^{-ξ/2-1} exp(-λ/(2x))`, and a d×d Inverse G-Wishart with shape `ξ`
//! has density proportional to `|X|^{-(ξ+2)/2} exp(-tr(ΛX⁻¹)/2)`. With the
//! full graph that is an ordinary Inverse Wishart with `ξ - d + 1` degrees of
//! freedom; with the diagonal graph it is a product of Inverse-χ² scales.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseChiSq {
    pub xi: f64,
    pub lambda: f64,
}

impl InverseChiSq {
    pub fn new(xi: f64, lambda: f64) -> Result<Self> {
        if !(xi > 0.0 && lambda > 0.0 && xi.is_finite() && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "Inverse-χ² needs positive finite parameters, got xi={xi}, lambda={lambda}"
            )));
        }
        Ok(Self { xi, lambda })
    }

    /// `E(1/x) = ξ/λ`.
    pub fn reciprocal_moment(&self) -> f64 {
        self.xi / self.lambda
    }
}

/// Free-function form of [`InverseChiSq::reciprocal_moment`].
pub fn inv_chisq_reciprocal_moment(d: &InverseChiSq) -> f64 {
    d.reciprocal_moment()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Graph {
    Full,
    Diag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseGWishart {
    pub graph: Graph,
    pub xi: f64,
    pub lambda: DMatrix<f64>,
}

impl InverseGWishart {
    pub fn new(graph: Graph, xi: f64, lambda: DMatrix<f64>) -> Result<Self> {
        let d = lambda.nrows();
        if d == 0 || d != lambda.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "Inverse G-Wishart scale must be square and nonempty, got {}x{}",
                lambda.nrows(),
                lambda.ncols()
            )));
        }
        if !(xi > 0.0) {
            return Err(Error::InvalidInput(format!("Inverse G-Wishart shape must be positive, got {xi}")));
        }
        Ok(Self { graph, xi, lambda })
    }

    pub fn dim(&self) -> usize {
        self.lambda.nrows()
    }

    /// `E(X⁻¹)`.
    pub fn inverse_moment(&self) -> Result<DMatrix<f64>> {
        igw_inverse_moment(self)
    }
}

/// `E(X⁻¹)`: `(ξ - d + 1) Λ⁻¹` for the full graph, `ξ Λ⁻¹` (diagonal) for the
/// diagonal graph.
pub fn igw_inverse_moment(d: &InverseGWishart) -> Result<DMatrix<f64>> {
    let dim = d.dim();
    match d.graph {
        Graph::Full => {
            let chol = d
                .lambda
                .clone()
                .cholesky()
                .ok_or_else(|| Error::NonPositiveDefinite("Inverse G-Wishart scale".into()))?;
            let mut inv = chol.inverse();
            symmetrize(&mut inv);
            Ok(inv * (d.xi - dim as f64 + 1.0))
        }
        Graph::Diag => {
            let mut out = DMatrix::zeros(dim, dim);
            for k in 0..dim {
                let v = d.lambda[(k, k)];
                if !(v > 0.0) {
                    return Err(Error::NonPositiveDefinite(format!(
                        "diagonal Inverse G-Wishart scale entry {k} is {v}"
                    )));
                }
                out[(k, k)] = d.xi / v;
            }
            Ok(out)
        }
    }
}

/// Upper-triangular `S` with `SᵀS = M`.
pub fn matrix_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonPositiveDefinite(format!("{}x{} matrix square root", m.nrows(), m.ncols())))?;
    Ok(chol.l().transpose())
}

/// Upper-triangular `S` with `SᵀS = M⁻¹`.
pub fn matrix_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonPositiveDefinite(format!("{}x{} matrix inverse root", m.nrows(), m.ncols())))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    matrix_sqrt(&inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reciprocal_moments() {
        assert_eq!(InverseChiSq::new(2.0, 4.0).unwrap().reciprocal_moment(), 0.5);
        assert_eq!(InverseChiSq::new(8.0, 8.0).unwrap().reciprocal_moment(), 1.0);
        assert!(InverseChiSq::new(0.0, 1.0).is_err());
    }

    #[test]
    fn full_graph_identity_scale() {
        let d = InverseGWishart::new(Graph::Full, 3.0, DMatrix::identity(2, 2)).unwrap();
        let m = d.inverse_moment().unwrap();
        assert!((m - DMatrix::<f64>::identity(2, 2) * 2.0).amax() < 1e-15);
    }

    #[test]
    fn diag_graph_is_exactly_diagonal() {
        let mut lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 4.0]));
        lambda[(0, 1)] = 0.3;
        lambda[(1, 0)] = 0.3;
        let m = InverseGWishart::new(Graph::Diag, 3.0, lambda).unwrap().inverse_moment().unwrap();
        assert_eq!(m[(0, 0)], 1.5);
        assert_eq!(m[(1, 1)], 0.75);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 0)], 0.0);
    }

    #[test]
    fn roots_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let s = matrix_inv_sqrt(&m).unwrap();
        assert!((s[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((s[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matrix_sqrt(&DMatrix::from_element(2, 2, 1.0)).is_err());
    }
}
