//! Design matrices of the group-specific curve models and their translation
//! into sparse least squares blocks.
//!
//! Two-level model for group `i`:
//!
//! ```text
//! y_i = C_gbl,i [β; u_gbl] + C_grp,i [u_lin,i; u_grp,i] + ε_i
//! ```
//!
//! with `C_gbl,i = [X_i  Z_gbl,i]` and `C_grp,i = [X_r,i  Z_grp,i]`. In the
//! standard model `X_r,i = X_i = [1 x]`; the contrast model uses wider
//! fixed and random linear blocks and splits `u_gbl` into one segment per
//! category, each with its own variance.
//!
//! Block builders take the current precisions (known variances for BLUP,
//! variational moments for MFVB) and emit the `b`, `B`, `Ḃ` (and `B̈`)
//! blocks whose least squares solution gives the coefficient estimates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ThreeLevelData, TwoLevelData};
use crate::distributions::matrix_sqrt;
use crate::error::{Error, Result};
use crate::solvers::{ThreeLevelBlock, ThreeLevelSparseProblem, TwoLevelBlock, TwoLevelSparseProblem};
use crate::splines::SplineBasis;

/// Default number of global spline columns.
pub const DEFAULT_K_GBL: usize = 20;
/// Default number of group (and subgroup) spline columns.
pub const DEFAULT_K_GRP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// `X = [1 x]` for both the fixed and the random linear part.
    Standard,
    /// Two-category contrast layout.
    Contrast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupDesign {
    pub y: DVector<f64>,
    pub c_gbl: DMatrix<f64>,
    pub c_grp: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelDesign {
    pub layout: Layout,
    pub labels: Vec<String>,
    pub groups: Vec<GroupDesign>,
    /// Width of `β`.
    pub n_fixed: usize,
    /// Sizes of the independently scaled segments of `u_gbl`.
    pub gbl_segments: Vec<usize>,
    /// Width of `u_lin,i`.
    pub n_lin: usize,
    pub basis_gbl: SplineBasis,
    pub basis_grp: SplineBasis,
    /// Training range of `x`.
    pub x_range: (f64, f64),
}

fn x_range(x: &[f64]) -> (f64, f64) {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// `[1 x Z]` for the given basis.
pub(crate) fn linear_spline_design(x: &[f64], basis: &SplineBasis) -> Result<DMatrix<f64>> {
    let z = basis.evaluate(x)?;
    let mut c = DMatrix::zeros(x.len(), 2 + z.ncols());
    for (r, &xv) in x.iter().enumerate() {
        c[(r, 0)] = 1.0;
        c[(r, 1)] = xv;
    }
    c.columns_mut(2, z.ncols()).copy_from(&z);
    Ok(c)
}

/// `n` equispaced points over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

impl TwoLevelDesign {
    /// Standard design with `k_gbl` global and `k_grp` group spline columns.
    pub fn new(data: &TwoLevelData, k_gbl: usize, k_grp: usize) -> Result<Self> {
        data.validate()?;
        let all_x = data.all_x();
        let basis_gbl = SplineBasis::from_data(&all_x, k_gbl)?;
        let basis_grp = SplineBasis::from_data(&all_x, k_grp)?;
        Self::with_bases(data, basis_gbl, basis_grp)
    }

    /// Standard design on given bases.
    pub fn with_bases(data: &TwoLevelData, basis_gbl: SplineBasis, basis_grp: SplineBasis) -> Result<Self> {
        data.validate()?;
        let groups = data
            .groups
            .par_iter()
            .map(|g| {
                Ok(GroupDesign {
                    y: DVector::from_column_slice(&g.y),
                    c_gbl: linear_spline_design(&g.x, &basis_gbl)?,
                    c_grp: linear_spline_design(&g.x, &basis_grp)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layout: Layout::Standard,
            labels: data.groups.iter().map(|g| g.label.clone()).collect(),
            groups,
            n_fixed: 2,
            gbl_segments: vec![basis_gbl.n_cols()],
            n_lin: 2,
            x_range: x_range(&data.all_x()),
            basis_gbl,
            basis_grp,
        })
    }

    pub fn m(&self) -> usize {
        self.groups.len()
    }

    pub fn p(&self) -> usize {
        self.n_fixed + self.gbl_segments.iter().sum::<usize>()
    }

    pub fn q(&self) -> usize {
        self.groups.first().map_or(0, |g| g.c_grp.ncols())
    }

    /// Number of group spline coefficients, `q - n_lin`.
    pub fn k_grp(&self) -> usize {
        self.q() - self.n_lin
    }

    pub fn n_obs(&self) -> usize {
        self.groups.iter().map(|g| g.y.len()).sum()
    }

    pub fn group_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownGroup(label.to_string()))
    }

    /// `n` equispaced points over the training range.
    pub fn default_grid(&self, n: usize) -> Vec<f64> {
        linspace(self.x_range.0, self.x_range.1, n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupDesign {
    pub y: DVector<f64>,
    pub c_gbl: DMatrix<f64>,
    pub c_g: DMatrix<f64>,
    pub c_h: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreeLevelDesign {
    pub labels: Vec<String>,
    pub sub_labels: Vec<Vec<String>>,
    pub groups: Vec<Vec<SubgroupDesign>>,
    pub basis_gbl: SplineBasis,
    pub basis_g: SplineBasis,
    pub basis_h: SplineBasis,
    pub x_range: (f64, f64),
}

impl ThreeLevelDesign {
    pub fn new(data: &ThreeLevelData, k_gbl: usize, k_g: usize, k_h: usize) -> Result<Self> {
        data.validate()?;
        let all_x = data.all_x();
        Self::with_bases(
            data,
            SplineBasis::from_data(&all_x, k_gbl)?,
            SplineBasis::from_data(&all_x, k_g)?,
            SplineBasis::from_data(&all_x, k_h)?,
        )
    }

    pub fn with_bases(
        data: &ThreeLevelData,
        basis_gbl: SplineBasis,
        basis_g: SplineBasis,
        basis_h: SplineBasis,
    ) -> Result<Self> {
        data.validate()?;
        let groups = data
            .groups
            .par_iter()
            .map(|g| {
                g.subgroups
                    .iter()
                    .map(|s| {
                        Ok(SubgroupDesign {
                            y: DVector::from_column_slice(&s.y),
                            c_gbl: linear_spline_design(&s.x, &basis_gbl)?,
                            c_g: linear_spline_design(&s.x, &basis_g)?,
                            c_h: linear_spline_design(&s.x, &basis_h)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            labels: data.groups.iter().map(|g| g.label.clone()).collect(),
            sub_labels: data
                .groups
                .iter()
                .map(|g| g.subgroups.iter().map(|s| s.label.clone()).collect())
                .collect(),
            groups,
            x_range: x_range(&data.all_x()),
            basis_gbl,
            basis_g,
            basis_h,
        })
    }

    pub fn m(&self) -> usize {
        self.groups.len()
    }

    /// Total number of subgroups.
    pub fn n_subgroups(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }

    fn first(&self) -> Option<&SubgroupDesign> {
        self.groups.iter().flatten().next()
    }

    pub fn p(&self) -> usize {
        self.first().map_or(2 + self.basis_gbl.n_cols(), |s| s.c_gbl.ncols())
    }

    pub fn q1(&self) -> usize {
        self.first().map_or(2 + self.basis_g.n_cols(), |s| s.c_g.ncols())
    }

    pub fn q2(&self) -> usize {
        self.first().map_or(2 + self.basis_h.n_cols(), |s| s.c_h.ncols())
    }

    pub fn n_obs(&self) -> usize {
        self.groups.iter().flatten().map(|s| s.y.len()).sum()
    }

    pub fn group_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownGroup(label.to_string()))
    }

    pub fn subgroup_index(&self, group: &str, subgroup: &str) -> Result<(usize, usize)> {
        let i = self.group_index(group)?;
        let j = self.sub_labels[i]
            .iter()
            .position(|l| l == subgroup)
            .ok_or_else(|| Error::UnknownGroup(format!("{group}/{subgroup}")))?;
        Ok((i, j))
    }

    pub fn default_grid(&self, n: usize) -> Vec<f64> {
        linspace(self.x_range.0, self.x_range.1, n)
    }
}

/// Prior on `β`, stored as the rows it contributes: `S` with `SᵀS = Σ_β⁻¹`
/// and `S μ_β`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaPrior {
    pub root: DMatrix<f64>,
    pub root_mu: DVector<f64>,
}

impl BetaPrior {
    pub fn new(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(Error::DimensionMismatch("β prior mean and covariance differ in size".into()));
        }
        let root = crate::distributions::matrix_inv_sqrt(sigma)?;
        let root_mu = &root * mu;
        Ok(Self { root, root_mu })
    }
}

/// Precisions feeding the two-level blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelPrecisions {
    /// `1/σ_ε²` or its variational moment.
    pub noise: f64,
    /// `None` for BLUP, where `β` is unpenalized.
    pub beta: Option<BetaPrior>,
    /// One precision per segment of `u_gbl`.
    pub gbl: Vec<f64>,
    /// Precision matrix of `u_lin,i`.
    pub lin: DMatrix<f64>,
    pub grp: f64,
}

fn check_positive(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidInput(format!("{what} must be positive and finite, got {v}")))
    }
}

/// Assemble the two-level sparse least squares blocks.
pub fn two_level_blocks(design: &TwoLevelDesign, prec: &TwoLevelPrecisions) -> Result<TwoLevelSparseProblem> {
    let m = design.m();
    let (pf, d) = (design.n_fixed, design.n_lin);
    let (p, q) = (design.p(), design.q());
    let kr = q - d;
    let kg = p - pf;
    if prec.gbl.len() != design.gbl_segments.len() {
        return Err(Error::DimensionMismatch("one global precision per segment is required".into()));
    }
    if prec.lin.nrows() != d {
        return Err(Error::DimensionMismatch(format!("linear precision must be {d}x{d}")));
    }
    let noise = check_positive(prec.noise, "noise precision")?.sqrt();
    let grp = check_positive(prec.grp, "group spline precision")?.sqrt();
    for &g in &prec.gbl {
        check_positive(g, "global spline precision")?;
    }
    let lin_root = matrix_sqrt(&prec.lin)?;
    let scale = (m as f64).powf(-0.5);
    let n_beta = if prec.beta.is_some() { pf } else { 0 };

    let groups = design
        .groups
        .par_iter()
        .map(|g| {
            let n = g.y.len();
            let rows = n + n_beta + kg + d + kr;
            let mut b = DVector::zeros(rows);
            let mut bm = DMatrix::zeros(rows, p);
            let mut bd = DMatrix::zeros(rows, q);
            b.rows_mut(0, n).copy_from(&(&g.y * noise));
            bm.view_mut((0, 0), (n, p)).copy_from(&(&g.c_gbl * noise));
            bd.view_mut((0, 0), (n, q)).copy_from(&(&g.c_grp * noise));
            let mut r = n;
            if let Some(beta) = &prec.beta {
                bm.view_mut((r, 0), (pf, pf)).copy_from(&(&beta.root * scale));
                b.rows_mut(r, pf).copy_from(&(&beta.root_mu * scale));
                r += pf;
            }
            let mut c = pf;
            for (seg, &tau) in design.gbl_segments.iter().zip(&prec.gbl) {
                let v = scale * tau.sqrt();
                for k in 0..*seg {
                    bm[(r + k, c + k)] = v;
                }
                r += seg;
                c += seg;
            }
            bd.view_mut((r, 0), (d, d)).copy_from(&lin_root);
            r += d;
            for k in 0..kr {
                bd[(r + k, d + k)] = grp;
            }
            TwoLevelBlock { b, b_mat: bm, b_dot: bd }
        })
        .collect();
    Ok(TwoLevelSparseProblem { groups })
}

/// Precisions feeding the three-level blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeLevelPrecisions {
    pub noise: f64,
    pub beta: Option<BetaPrior>,
    pub gbl: f64,
    pub lin_g: DMatrix<f64>,
    pub grp_g: f64,
    pub lin_h: DMatrix<f64>,
    pub grp_h: f64,
}

/// Assemble the three-level sparse least squares blocks.
pub fn three_level_blocks(design: &ThreeLevelDesign, prec: &ThreeLevelPrecisions) -> Result<ThreeLevelSparseProblem> {
    let (p, q1, q2) = (design.p(), design.q1(), design.q2());
    let (kg, kgg, kh) = (p - 2, q1 - 2, q2 - 2);
    let noise = check_positive(prec.noise, "noise precision")?.sqrt();
    let gbl = check_positive(prec.gbl, "global spline precision")?.sqrt();
    let grp_g = check_positive(prec.grp_g, "group spline precision")?.sqrt();
    let grp_h = check_positive(prec.grp_h, "subgroup spline precision")?.sqrt();
    let root_g = matrix_sqrt(&prec.lin_g)?;
    let root_h = matrix_sqrt(&prec.lin_h)?;
    let scale_all = (design.n_subgroups() as f64).powf(-0.5);
    let n_beta = if prec.beta.is_some() { 2 } else { 0 };

    let groups = design
        .groups
        .par_iter()
        .map(|group| {
            let scale_i = (group.len() as f64).powf(-0.5);
            group
                .iter()
                .map(|s| {
                    let o = s.y.len();
                    let rows = o + n_beta + kg + 2 + kgg + 2 + kh;
                    let mut b = DVector::zeros(rows);
                    let mut bm = DMatrix::zeros(rows, p);
                    let mut bd = DMatrix::zeros(rows, q1);
                    let mut bdd = DMatrix::zeros(rows, q2);
                    b.rows_mut(0, o).copy_from(&(&s.y * noise));
                    bm.view_mut((0, 0), (o, p)).copy_from(&(&s.c_gbl * noise));
                    bd.view_mut((0, 0), (o, q1)).copy_from(&(&s.c_g * noise));
                    bdd.view_mut((0, 0), (o, q2)).copy_from(&(&s.c_h * noise));
                    let mut r = o;
                    if let Some(beta) = &prec.beta {
                        bm.view_mut((r, 0), (2, 2)).copy_from(&(&beta.root * scale_all));
                        b.rows_mut(r, 2).copy_from(&(&beta.root_mu * scale_all));
                        r += 2;
                    }
                    for k in 0..kg {
                        bm[(r + k, 2 + k)] = scale_all * gbl;
                    }
                    r += kg;
                    bd.view_mut((r, 0), (2, 2)).copy_from(&(&root_g * scale_i));
                    r += 2;
                    for k in 0..kgg {
                        bd[(r + k, 2 + k)] = scale_i * grp_g;
                    }
                    r += kgg;
                    bdd.view_mut((r, 0), (2, 2)).copy_from(&root_h);
                    r += 2;
                    for k in 0..kh {
                        bdd[(r + k, 2 + k)] = grp_h;
                    }
                    ThreeLevelBlock { b, b_mat: bm, b_dot: bd, b_ddot: bdd }
                })
                .collect()
        })
        .collect();
    Ok(ThreeLevelSparseProblem { groups })
}
