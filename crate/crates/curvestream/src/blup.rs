//! Best linear unbiased prediction with known variance parameters.
//!
//! The fixed effects are unpenalized and every random effect block enters
//! through its precision, so a single call to the sparse solver gives the
//! estimates together with the prediction error covariance blocks needed
//! for pointwise confidence bands.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{
    three_level_blocks, two_level_blocks, Layout, ThreeLevelDesign, ThreeLevelPrecisions, TwoLevelDesign,
    TwoLevelPrecisions,
};
use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::solvers::{
    solve_three_level, solve_two_level, ThreeLevelSolution, ThreeLevelSparseProblem, TwoLevelSolution,
    TwoLevelSparseProblem,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceParamsTwoLevel {
    pub sigma_eps_sq: f64,
    pub sigma_gbl_sq: f64,
    pub sigma_grp_sq: f64,
    /// Covariance of the random intercept and slope, 2×2.
    pub sigma: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceParamsThreeLevel {
    pub sigma_eps_sq: f64,
    pub sigma_gbl_sq: f64,
    pub sigma_grp_g_sq: f64,
    pub sigma_grp_h_sq: f64,
    pub sigma_g: DMatrix<f64>,
    pub sigma_h: DMatrix<f64>,
}

fn positive(v: f64, name: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidInput(format!("{name} must be positive and finite, got {v}")))
    }
}

fn spd_inverse(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    if m.nrows() != 2 || m.ncols() != 2 {
        return Err(Error::DimensionMismatch(format!("{name} must be 2x2")));
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonPositiveDefinite(name.to_string()))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

impl VarianceParamsTwoLevel {
    pub fn precisions(&self) -> Result<TwoLevelPrecisions> {
        Ok(TwoLevelPrecisions {
            noise: 1.0 / positive(self.sigma_eps_sq, "sigma_eps_sq")?,
            beta: None,
            gbl: vec![1.0 / positive(self.sigma_gbl_sq, "sigma_gbl_sq")?],
            lin: spd_inverse(&self.sigma, "Sigma")?,
            grp: 1.0 / positive(self.sigma_grp_sq, "sigma_grp_sq")?,
        })
    }
}

impl VarianceParamsThreeLevel {
    pub fn precisions(&self) -> Result<ThreeLevelPrecisions> {
        Ok(ThreeLevelPrecisions {
            noise: 1.0 / positive(self.sigma_eps_sq, "sigma_eps_sq")?,
            beta: None,
            gbl: 1.0 / positive(self.sigma_gbl_sq, "sigma_gbl_sq")?,
            lin_g: spd_inverse(&self.sigma_g, "Sigma_g")?,
            grp_g: 1.0 / positive(self.sigma_grp_g_sq, "sigma_grp_g_sq")?,
            lin_h: spd_inverse(&self.sigma_h, "Sigma_h")?,
            grp_h: 1.0 / positive(self.sigma_grp_h_sq, "sigma_grp_h_sq")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlupFitTwoLevel {
    pub variances: VarianceParamsTwoLevel,
    /// `x1 = (β̂, û_gbl)`, `x2_i = (û_lin,i, û_grp,i)` and the error
    /// covariance blocks.
    pub solution: TwoLevelSolution,
}

impl BlupFitTwoLevel {
    pub fn beta(&self) -> DVector<f64> {
        self.solution.x1.rows(0, 2).into_owned()
    }

    pub fn u_gbl(&self) -> DVector<f64> {
        let p = self.solution.x1.len();
        self.solution.x1.rows(2, p - 2).into_owned()
    }

    pub fn u_lin(&self, i: usize) -> DVector<f64> {
        self.solution.groups[i].x2.rows(0, 2).into_owned()
    }

    pub fn u_grp(&self, i: usize) -> DVector<f64> {
        let x2 = &self.solution.groups[i].x2;
        x2.rows(2, x2.len() - 2).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlupFitThreeLevel {
    pub variances: VarianceParamsThreeLevel,
    pub solution: ThreeLevelSolution,
}

fn require_standard(design: &TwoLevelDesign) -> Result<()> {
    if design.layout != Layout::Standard {
        return Err(Error::InvalidInput("BLUP fitting needs the standard design layout".into()));
    }
    Ok(())
}

pub fn build_two_level_blup_blocks(
    design: &TwoLevelDesign,
    var: &VarianceParamsTwoLevel,
) -> Result<TwoLevelSparseProblem> {
    require_standard(design)?;
    two_level_blocks(design, &var.precisions()?)
}

pub fn fit_blup_two_level(design: &TwoLevelDesign, var: &VarianceParamsTwoLevel) -> Result<BlupFitTwoLevel> {
    let problem = build_two_level_blup_blocks(design, var)?;
    Ok(BlupFitTwoLevel { variances: var.clone(), solution: solve_two_level(&problem)? })
}

pub fn build_three_level_blup_blocks(
    design: &ThreeLevelDesign,
    var: &VarianceParamsThreeLevel,
) -> Result<ThreeLevelSparseProblem> {
    three_level_blocks(design, &var.precisions()?)
}

pub fn fit_blup_three_level(design: &ThreeLevelDesign, var: &VarianceParamsThreeLevel) -> Result<BlupFitThreeLevel> {
    let problem = build_three_level_blup_blocks(design, var)?;
    Ok(BlupFitThreeLevel { variances: var.clone(), solution: solve_three_level(&problem)? })
}
