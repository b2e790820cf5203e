//! Mean field variational Bayes for the Bayesian group-specific curve models.
//!
//! Every variance parameter gets a half-t style prior through an auxiliary
//! scale: `σ² | a ~ Inverse-χ²(ν, 1/a)` with `a ~ Inverse-χ²(1, 1/(ν s²))`,
//! and each random linear covariance `Σ` gets the matrix analogue with a
//! diagonal auxiliary `A_Σ`. The coefficient update is a sparse least
//! squares problem, the rest are closed-form scale updates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{Graph, InverseGWishart};
use crate::error::{Error, Result};

mod elbo;
pub mod three_level;
pub mod two_level;

pub use elbo::{elbo_two_level, log_multigamma};
pub use three_level::{
    fit_mfvb_three_level, init_q_state_three_level, mfvb_cycle_three_level, stats_three_level, QStateThreeLevel,
    ThreeLevelStats,
};
pub use two_level::{
    fit_mfvb_two_level, init_q_state_two_level, mfvb_cycle_two_level, stats_two_level, QStateTwoLevel,
    TwoLevelStats,
};

/// Default prior scale for every `s` hyperparameter.
pub const DEFAULT_SCALE: f64 = 1e5;
/// Default variance of each entry of `β`.
pub const DEFAULT_BETA_VARIANCE: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparametersTwoLevel {
    pub mu_beta: DVector<f64>,
    pub sigma_beta: DMatrix<f64>,
    pub nu_eps: f64,
    pub s_eps: f64,
    pub nu_gbl: f64,
    pub s_gbl: f64,
    pub nu_grp: f64,
    pub s_grp: f64,
    pub nu_sigma: f64,
    /// One scale per random linear coefficient.
    pub s_sigma: Vec<f64>,
}

impl HyperparametersTwoLevel {
    /// Diffuse defaults for `n_fixed` fixed effects and `n_lin` random
    /// linear coefficients.
    pub fn diffuse(n_fixed: usize, n_lin: usize) -> Self {
        Self {
            mu_beta: DVector::zeros(n_fixed),
            sigma_beta: DMatrix::identity(n_fixed, n_fixed) * DEFAULT_BETA_VARIANCE,
            nu_eps: 1.0,
            s_eps: DEFAULT_SCALE,
            nu_gbl: 1.0,
            s_gbl: DEFAULT_SCALE,
            nu_grp: 1.0,
            s_grp: DEFAULT_SCALE,
            nu_sigma: 2.0,
            s_sigma: vec![DEFAULT_SCALE; n_lin],
        }
    }

    pub fn default_for(design: &crate::design::TwoLevelDesign) -> Self {
        Self::diffuse(design.n_fixed, design.n_lin)
    }

    pub fn validate(&self, n_fixed: usize, n_lin: usize) -> Result<()> {
        if self.mu_beta.len() != n_fixed || self.sigma_beta.shape() != (n_fixed, n_fixed) {
            return Err(Error::DimensionMismatch(format!("β prior must have dimension {n_fixed}")));
        }
        if self.s_sigma.len() != n_lin {
            return Err(Error::DimensionMismatch(format!("s_sigma must have {n_lin} entries")));
        }
        let scalars = [
            ("nu_eps", self.nu_eps),
            ("s_eps", self.s_eps),
            ("nu_gbl", self.nu_gbl),
            ("s_gbl", self.s_gbl),
            ("nu_grp", self.nu_grp),
            ("s_grp", self.s_grp),
            ("nu_sigma", self.nu_sigma),
        ];
        for (name, v) in scalars.into_iter().chain(self.s_sigma.iter().map(|&s| ("s_sigma", s))) {
            positive(v, name)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparametersThreeLevel {
    pub mu_beta: DVector<f64>,
    pub sigma_beta: DMatrix<f64>,
    pub nu_eps: f64,
    pub s_eps: f64,
    pub nu_gbl: f64,
    pub s_gbl: f64,
    pub nu_grp_g: f64,
    pub s_grp_g: f64,
    pub nu_grp_h: f64,
    pub s_grp_h: f64,
    pub nu_sigma_g: f64,
    pub s_sigma_g: Vec<f64>,
    pub nu_sigma_h: f64,
    pub s_sigma_h: Vec<f64>,
}

impl Default for HyperparametersThreeLevel {
    fn default() -> Self {
        Self {
            mu_beta: DVector::zeros(2),
            sigma_beta: DMatrix::identity(2, 2) * DEFAULT_BETA_VARIANCE,
            nu_eps: 1.0,
            s_eps: DEFAULT_SCALE,
            nu_gbl: 1.0,
            s_gbl: DEFAULT_SCALE,
            nu_grp_g: 1.0,
            s_grp_g: DEFAULT_SCALE,
            nu_grp_h: 1.0,
            s_grp_h: DEFAULT_SCALE,
            nu_sigma_g: 2.0,
            s_sigma_g: vec![DEFAULT_SCALE; 2],
            nu_sigma_h: 2.0,
            s_sigma_h: vec![DEFAULT_SCALE; 2],
        }
    }
}

impl HyperparametersThreeLevel {
    pub fn validate(&self) -> Result<()> {
        if self.mu_beta.len() != 2 || self.sigma_beta.shape() != (2, 2) {
            return Err(Error::DimensionMismatch("β prior must have dimension 2".into()));
        }
        if self.s_sigma_g.len() != 2 || self.s_sigma_h.len() != 2 {
            return Err(Error::DimensionMismatch("s_sigma_g and s_sigma_h need 2 entries".into()));
        }
        let scalars = [
            ("nu_eps", self.nu_eps),
            ("s_eps", self.s_eps),
            ("nu_gbl", self.nu_gbl),
            ("s_gbl", self.s_gbl),
            ("nu_grp_g", self.nu_grp_g),
            ("s_grp_g", self.s_grp_g),
            ("nu_grp_h", self.nu_grp_h),
            ("s_grp_h", self.s_grp_h),
            ("nu_sigma_g", self.nu_sigma_g),
            ("nu_sigma_h", self.nu_sigma_h),
        ];
        for (name, v) in scalars
            .into_iter()
            .chain(self.s_sigma_g.iter().chain(&self.s_sigma_h).map(|&s| ("s_sigma", s)))
        {
            positive(v, name)?;
        }
        Ok(())
    }
}

fn positive(v: f64, name: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidInput(format!("{name} must be positive and finite, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceMetric {
    /// Relative increase of the lower bound on the marginal log-likelihood.
    Elbo,
    /// Largest relative change among the global coefficients and the scale
    /// parameters.
    ParamChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub rel_tol: f64,
    /// `None` picks the lower bound at two levels and parameter change at
    /// three levels.
    pub convergence_metric: Option<ConvergenceMetric>,
    /// Run exactly this many cycles and skip the stopping rule.
    pub fixed_iterations: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 500, rel_tol: 1e-5, convergence_metric: None, fixed_iterations: None }
    }
}

impl FitOptions {
    pub fn fixed(iterations: usize) -> Self {
        Self { fixed_iterations: Some(iterations), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidInput(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if self.max_iterations == 0 && self.fixed_iterations.is_none() {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// An Inverse-χ² q-density with its cached reciprocal moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactor {
    pub xi: f64,
    pub lambda: f64,
    /// `E_q(1/x) = ξ/λ`.
    pub recip: f64,
}

impl ScaleFactor {
    /// Shape `xi` with reciprocal moment 1.
    pub fn unit(xi: f64) -> Self {
        Self { xi, lambda: xi, recip: 1.0 }
    }

    pub fn set_lambda(&mut self, lambda: f64, what: &str) -> Result<()> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::NonFinite(format!("λ of q({what}) = {lambda}")));
        }
        self.lambda = lambda;
        self.recip = self.xi / lambda;
        Ok(())
    }
}

/// An Inverse G-Wishart q-density with its cached inverse moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovFactor {
    pub graph: Graph,
    pub xi: f64,
    pub lambda: DMatrix<f64>,
    /// `E_q(X⁻¹)`.
    pub m: DMatrix<f64>,
}

impl CovFactor {
    /// Shape `xi` with inverse moment `I`.
    pub fn unit(graph: Graph, xi: f64, d: usize) -> Self {
        let factor = match graph {
            Graph::Full => xi - d as f64 + 1.0,
            Graph::Diag => xi,
        };
        Self { graph, xi, lambda: DMatrix::identity(d, d) * factor, m: DMatrix::identity(d, d) }
    }

    pub fn set_lambda(&mut self, lambda: DMatrix<f64>, what: &str) -> Result<()> {
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Λ of q({what})")));
        }
        let igw = InverseGWishart::new(self.graph, self.xi, lambda)?;
        self.m = igw.inverse_moment()?;
        self.lambda = igw.lambda;
        Ok(())
    }
}

/// Result of a variational fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfvbFit<S> {
    pub state: S,
    pub iterations: usize,
    pub converged: bool,
    /// Lower bound after each cycle (two-level fits only).
    pub elbo_trace: Vec<f64>,
    pub wall_time_s: f64,
}

fn rel_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-300)
}

fn rel_change_vec(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    (new - old).norm() / old.norm().max(1e-300)
}

fn rel_change_mat(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    (new - old).norm() / old.norm().max(1e-300)
}
