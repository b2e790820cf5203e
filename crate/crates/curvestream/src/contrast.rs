//! Two-category contrast curves.
//!
//! Observations carry an indicator `ι` (1 for category A). The fixed part
//! becomes `[1, x, 1−ι, (1−ι)x]`, so `β₂ + β₃x` is the linear part of the
//! B-minus-A difference. Global spline coefficients split into an A block
//! and a B block with separate variances; group curves get a 4-dimensional
//! random linear part (one intercept and slope per category) and a pooled
//! group spline variance. The contrast is
//!
//! ```text
//! c(x) = β₂ + β₃x + Σ_k (u^B_gbl,k − u^A_gbl,k) z_gbl,k(x)
//! ```

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::CategorizedTwoLevelData;
use crate::design::{GroupDesign, Layout, TwoLevelDesign};
use crate::error::{Error, Result};
use crate::mfvb::{fit_mfvb_two_level, FitOptions, HyperparametersTwoLevel, MfvbFit, QStateTwoLevel};
use crate::predict::{band_from, Band};
use crate::solvers::TwoLevelSolution;
use crate::splines::SplineBasis;

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastFit {
    pub design: TwoLevelDesign,
    pub fit: MfvbFit<QStateTwoLevel>,
    pub category_a: String,
    pub category_b: String,
}

/// `[ι, ιx, 1−ι, (1−ι)x, ι⊙Z, (1−ι)⊙Z]`, or with `[1, x, …]` leading when
/// `fixed` is set.
fn masked_design(x: &[f64], iota: &[bool], basis: &SplineBasis, fixed: bool) -> Result<DMatrix<f64>> {
    let z = basis.evaluate(x)?;
    let k = z.ncols();
    let mut c = DMatrix::zeros(x.len(), 4 + 2 * k);
    for (r, (&xv, &a)) in x.iter().zip(iota).enumerate() {
        let (ia, ib) = if a { (1.0, 0.0) } else { (0.0, 1.0) };
        c[(r, 0)] = if fixed { 1.0 } else { ia };
        c[(r, 1)] = if fixed { xv } else { ia * xv };
        c[(r, 2)] = ib;
        c[(r, 3)] = ib * xv;
        for j in 0..k {
            c[(r, 4 + j)] = ia * z[(r, j)];
            c[(r, 4 + k + j)] = ib * z[(r, j)];
        }
    }
    Ok(c)
}

/// Contrast layout on bases built from all `x` values.
pub fn build_contrast_design(data: &CategorizedTwoLevelData, k_gbl: usize, k_grp: usize) -> Result<TwoLevelDesign> {
    data.validate()?;
    let all_x = data.all_x();
    build_contrast_design_with_bases(data, SplineBasis::from_data(&all_x, k_gbl)?, SplineBasis::from_data(&all_x, k_grp)?)
}

pub fn build_contrast_design_with_bases(
    data: &CategorizedTwoLevelData,
    basis_gbl: SplineBasis,
    basis_grp: SplineBasis,
) -> Result<TwoLevelDesign> {
    data.validate()?;
    let groups = data
        .groups
        .par_iter()
        .map(|g| {
            Ok(GroupDesign {
                y: DVector::from_column_slice(&g.y),
                c_gbl: masked_design(&g.x, &g.iota, &basis_gbl, true)?,
                c_grp: masked_design(&g.x, &g.iota, &basis_grp, false)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all_x = data.all_x();
    let lo = all_x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all_x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = basis_gbl.n_cols();
    Ok(TwoLevelDesign {
        layout: Layout::Contrast,
        labels: data.groups.iter().map(|g| g.label.clone()).collect(),
        groups,
        n_fixed: 4,
        gbl_segments: vec![k, k],
        n_lin: 4,
        basis_gbl,
        basis_grp,
        x_range: (lo, hi),
    })
}

/// Fit the contrast model by MFVB. `hyper = None` uses the diffuse defaults.
pub fn fit_contrast(
    data: &CategorizedTwoLevelData,
    k_gbl: usize,
    k_grp: usize,
    hyper: Option<&HyperparametersTwoLevel>,
    opts: &FitOptions,
) -> Result<ContrastFit> {
    let design = build_contrast_design(data, k_gbl, k_grp)?;
    let default = HyperparametersTwoLevel::default_for(&design);
    let fit = fit_mfvb_two_level(&design, hyper.unwrap_or(&default), opts)?;
    Ok(ContrastFit { design, fit, category_a: data.category_a.clone(), category_b: data.category_b.clone() })
}

/// Coefficient selector `s(x)` with `c(x) = s(x)ᵀ (β, u_gbl)`.
pub fn contrast_selector(basis_gbl: &SplineBasis, x: f64) -> Result<DVector<f64>> {
    let z = basis_gbl.evaluate_one(x)?;
    let k = z.len();
    let mut s = DVector::zeros(4 + 2 * k);
    s[2] = 1.0;
    s[3] = x;
    for j in 0..k {
        s[4 + j] = -z[j];
        s[4 + k + j] = z[j];
    }
    Ok(s)
}

/// Contrast estimate with a pointwise band at `level`.
pub fn contrast_curve(design: &TwoLevelDesign, coef: &TwoLevelSolution, grid: &[f64], level: f64) -> Result<Band> {
    if design.layout != Layout::Contrast {
        return Err(Error::InvalidInput("contrast curves need a contrast design".into()));
    }
    contrast_curve_on_basis(&design.basis_gbl, coef, grid, level)
}

pub fn contrast_curve_on_basis(
    basis_gbl: &SplineBasis,
    coef: &TwoLevelSolution,
    grid: &[f64],
    level: f64,
) -> Result<Band> {
    if coef.x1.len() != 4 + 2 * basis_gbl.n_cols() {
        return Err(Error::DimensionMismatch("coefficients do not follow the contrast layout".into()));
    }
    let mut mean = Vec::with_capacity(grid.len());
    let mut var = Vec::with_capacity(grid.len());
    for &x in grid {
        let s = contrast_selector(basis_gbl, x)?;
        mean.push(s.dot(&coef.x1));
        var.push(s.dot(&(&coef.a11 * &s)));
    }
    band_from(grid, mean, var, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CategorizedGroup;

    fn tiny() -> CategorizedTwoLevelData {
        let x: Vec<f64> = (0..12).map(|k| k as f64 / 11.0).collect();
        CategorizedTwoLevelData {
            groups: vec![CategorizedGroup {
                label: "g".into(),
                y: x.clone(),
                iota: (0..12).map(|k| k % 3 != 0).collect(),
                x,
            }],
            category_a: "A".into(),
            category_b: "B".into(),
        }
    }

    #[test]
    fn masks_are_complementary() {
        let data = tiny();
        let d = build_contrast_design(&data, 4, 3).unwrap();
        let g = &d.groups[0];
        let basis = &d.basis_gbl;
        let z = basis.evaluate(&data.groups[0].x).unwrap();
        for r in 0..12 {
            let a = data.groups[0].iota[r];
            for j in 0..4 {
                let (za, zb) = (g.c_gbl[(r, 4 + j)], g.c_gbl[(r, 8 + j)]);
                assert_eq!(if a { za } else { zb }, z[(r, j)]);
                assert_eq!(if a { zb } else { za }, 0.0);
            }
            assert_eq!(g.c_grp[(r, 0)] + g.c_grp[(r, 2)], 1.0);
        }
        assert_eq!(g.c_gbl.ncols(), 12);
    }

    #[test]
    fn single_category_rejected() {
        let mut data = tiny();
        data.groups[0].iota.iter_mut().for_each(|v| *v = true);
        assert!(matches!(build_contrast_design(&data, 4, 3), Err(Error::SingleCategory(_))));
    }
}
