//! Pointwise curve estimates with standard errors and bands.
//!
//! For a global curve the variance at `x` is `c_gblᵀ A11 c_gbl` with
//! `c_gbl = (1, x, z_gbl(x))`. A group curve adds its own block and the
//! cross term, `c_grpᵀ A22 c_grp + 2 c_gblᵀ A12 c_grp`, and a subgroup curve
//! at three levels adds the analogous three terms one level down. The same
//! code serves BLUP fits (error covariances) and MFVB fits (posterior
//! covariances).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{Layout, ThreeLevelDesign, TwoLevelDesign};
use crate::error::{Error, Result};
use crate::solvers::{ThreeLevelSolution, TwoLevelSolution};
use crate::splines::SplineBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Global,
    Group(usize),
    Subgroup(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

/// Two-sided normal quantile `z_{(1+level)/2}`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidInput(format!("band level must lie in [0, 1), got {level}")));
    }
    if level == 0.0 {
        return Ok(0.0);
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(0.5 * (1.0 + level)))
}

pub(crate) fn linear_row(basis: &SplineBasis, x: f64) -> Result<DVector<f64>> {
    let z = basis.evaluate_one(x)?;
    let mut c = DVector::zeros(2 + z.len());
    c[0] = 1.0;
    c[1] = x;
    c.rows_mut(2, z.len()).copy_from(&z);
    Ok(c)
}

pub(crate) fn band_from(x: &[f64], mean: Vec<f64>, var: Vec<f64>, level: f64) -> Result<Band> {
    let z = normal_quantile(level)?;
    let sd: Vec<f64> = var.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(Band {
        x: x.to_vec(),
        lower: mean.iter().zip(&sd).map(|(m, s)| m - z * s).collect(),
        upper: mean.iter().zip(&sd).map(|(m, s)| m + z * s).collect(),
        mean,
        sd,
        level,
    })
}

/// Mean and standard deviation of a two-level curve on `grid`.
pub fn predict_two_level(
    design: &TwoLevelDesign,
    sol: &TwoLevelSolution,
    grid: &[f64],
    target: Target,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let b = credible_band_two_level(design, sol, grid, target, 0.0)?;
    Ok((b.mean, b.sd))
}

pub fn credible_band_two_level(
    design: &TwoLevelDesign,
    sol: &TwoLevelSolution,
    grid: &[f64],
    target: Target,
    level: f64,
) -> Result<Band> {
    if design.layout != Layout::Standard {
        return Err(Error::InvalidInput("use the contrast curve for contrast fits".into()));
    }
    band_two_level_on_bases(&design.basis_gbl, &design.basis_grp, sol, grid, target, level)
}

/// Same as [`credible_band_two_level`] from the bases alone, for fits
/// loaded without their data.
pub fn band_two_level_on_bases(
    basis_gbl: &SplineBasis,
    basis_grp: &SplineBasis,
    sol: &TwoLevelSolution,
    grid: &[f64],
    target: Target,
    level: f64,
) -> Result<Band> {
    let group = match target {
        Target::Global => None,
        Target::Group(i) => Some(
            sol.groups
                .get(i)
                .ok_or_else(|| Error::UnknownGroup(format!("group index {i}")))?,
        ),
        Target::Subgroup(..) => {
            return Err(Error::InvalidInput("two-level fits have no subgroups".into()));
        }
    };
    let mut mean = Vec::with_capacity(grid.len());
    let mut var = Vec::with_capacity(grid.len());
    for &x in grid {
        let cg = linear_row(basis_gbl, x)?;
        let mut mu = cg.dot(&sol.x1);
        let mut v = cg.dot(&(&sol.a11 * &cg));
        if let Some(g) = group {
            let cr = linear_row(basis_grp, x)?;
            mu += cr.dot(&g.x2);
            v += cr.dot(&(&g.a22 * &cr)) + 2.0 * cg.dot(&(&g.a12 * &cr));
        }
        mean.push(mu);
        var.push(v);
    }
    band_from(grid, mean, var, level)
}

pub fn predict_three_level(
    design: &ThreeLevelDesign,
    sol: &ThreeLevelSolution,
    grid: &[f64],
    target: Target,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let b = credible_band_three_level(design, sol, grid, target, 0.0)?;
    Ok((b.mean, b.sd))
}

pub fn credible_band_three_level(
    design: &ThreeLevelDesign,
    sol: &ThreeLevelSolution,
    grid: &[f64],
    target: Target,
    level: f64,
) -> Result<Band> {
    band_three_level_on_bases([&design.basis_gbl, &design.basis_g, &design.basis_h], sol, grid, target, level)
}

/// Three-level band from the global, group and subgroup bases.
pub fn band_three_level_on_bases(
    bases: [&SplineBasis; 3],
    sol: &ThreeLevelSolution,
    grid: &[f64],
    target: Target,
    level: f64,
) -> Result<Band> {
    let (gi, sj) = match target {
        Target::Global => (None, None),
        Target::Group(i) => (Some(i), None),
        Target::Subgroup(i, j) => (Some(i), Some(j)),
    };
    let group = gi
        .map(|i| sol.groups.get(i).ok_or_else(|| Error::UnknownGroup(format!("group index {i}"))))
        .transpose()?;
    let sub = match (group, sj) {
        (Some(g), Some(j)) => Some(
            g.subgroups
                .get(j)
                .ok_or_else(|| Error::UnknownGroup(format!("subgroup index {j}")))?,
        ),
        _ => None,
    };
    let mut mean = Vec::with_capacity(grid.len());
    let mut var = Vec::with_capacity(grid.len());
    for &x in grid {
        let cg = linear_row(bases[0], x)?;
        let mut mu = cg.dot(&sol.x1);
        let mut v = cg.dot(&(&sol.a11 * &cg));
        if let Some(g) = group {
            let c1 = linear_row(bases[1], x)?;
            mu += c1.dot(&g.x2);
            v += c1.dot(&(&g.a22 * &c1)) + 2.0 * cg.dot(&(&g.a12 * &c1));
            if let Some(s) = sub {
                let c2 = linear_row(bases[2], x)?;
                mu += c2.dot(&s.x2);
                v += c2.dot(&(&s.a22 * &c2))
                    + 2.0 * cg.dot(&(&s.a12 * &c2))
                    + 2.0 * c1.dot(&(&s.a12_cross * &c2));
            }
        }
        mean.push(mu);
        var.push(v);
    }
    band_from(grid, mean, var, level)
}
