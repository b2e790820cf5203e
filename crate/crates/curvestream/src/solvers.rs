//! QR-based solvers for two- and three-level sparse least squares problems.
//!
//! The stacked design `B` of a two-level problem has the arrow shape
//!
//! ```text
//! [ B_1  Ḃ_1           ]
//! [ B_2       Ḃ_2      ]
//! [ ...           ...  ]
//! [ B_m            Ḃ_m ]
//! ```
//!
//! and the three-level problem nests the same shape one level down. The
//! solvers never form `B` or `BᵀB`. Each group block is reduced with its own
//! Householder factorization, the leftover rows are stacked into a thin
//! matrix with `p` columns, and one final factorization gives the shared
//! coefficients. Cost and memory are linear in the number of groups.
//!
//! Besides the least squares solution the solvers return exactly the
//! sub-blocks of `A⁻¹ = (BᵀB)⁻¹` that sit on the nonzero pattern of `A`,
//! plus `log|A|`, which falls out of the triangular factors for free.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};
use crate::linalg::{max_abs, spd_inverse_logdet, symmetrize};

/// Relative tolerance on `|R_kk|` below which a factorization is rejected.
pub const RANK_TOL: f64 = 1e-10;

/// One group of a two-level problem: `b_i`, `B_i` and `Ḃ_i` share a row count.
#[derive(Debug, Clone)]
pub struct TwoLevelBlock {
    pub b: DVector<f64>,
    pub b_mat: DMatrix<f64>,
    pub b_dot: DMatrix<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TwoLevelSparseProblem {
    pub groups: Vec<TwoLevelBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelGroupSolution {
    pub x2: DVector<f64>,
    /// `A^{22,i}`, q×q.
    pub a22: DMatrix<f64>,
    /// `A^{12,i}`, p×q.
    pub a12: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelSolution {
    pub x1: DVector<f64>,
    pub a11: DMatrix<f64>,
    pub groups: Vec<TwoLevelGroupSolution>,
    /// `log|BᵀB|`.
    pub log_det_a: f64,
}

/// One subgroup `(i, j)` of a three-level problem.
#[derive(Debug, Clone)]
pub struct ThreeLevelBlock {
    pub b: DVector<f64>,
    pub b_mat: DMatrix<f64>,
    pub b_dot: DMatrix<f64>,
    pub b_ddot: DMatrix<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ThreeLevelSparseProblem {
    /// Outer index `i`, inner index `j`.
    pub groups: Vec<Vec<ThreeLevelBlock>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelSubgroupSolution {
    pub x2: DVector<f64>,
    /// `A^{22,ij}`, q2×q2.
    pub a22: DMatrix<f64>,
    /// `A^{12,ij}`, p×q2.
    pub a12: DMatrix<f64>,
    /// `A^{12,i,j}`, q1×q2: the block linking group `i` to its subgroup `j`.
    pub a12_cross: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelGroupSolution {
    pub x2: DVector<f64>,
    /// `A^{22,i}`, q1×q1.
    pub a22: DMatrix<f64>,
    /// `A^{12,i}`, p×q1.
    pub a12: DMatrix<f64>,
    pub subgroups: Vec<ThreeLevelSubgroupSolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelSolution {
    pub x1: DVector<f64>,
    pub a11: DMatrix<f64>,
    pub groups: Vec<ThreeLevelGroupSolution>,
    /// `log|BᵀB|`.
    pub log_det_a: f64,
}

fn check_rank(r: &DMatrix<f64>, at: Location) -> Result<()> {
    let tol = RANK_TOL * max_abs(r);
    for k in 0..r.ncols() {
        let v = r[(k, k)].abs();
        // Written as a negated comparison so NaN is rejected too.
        if !(v > tol) {
            return Err(Error::RankDeficient { at, value: v, tol });
        }
    }
    Ok(())
}

fn log_abs_diag(r: &DMatrix<f64>) -> f64 {
    (0..r.ncols()).map(|k| r[(k, k)].abs().ln()).sum()
}

/// Full Householder QR: `M = Q [R; 0]` with `Q` square orthonormal.
pub fn qr_full(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (rows, cols) = m.shape();
    if rows < cols || cols == 0 {
        return Err(Error::DimensionMismatch(format!(
            "qr_full needs rows >= cols >= 1, got {rows}x{cols}"
        )));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    check_rank(&r, Location::Standalone)?;
    let mut qt = DMatrix::identity(rows, rows);
    qr.q_tr_mul(&mut qt);
    Ok((qt.transpose(), r))
}

/// Factor `target = Q [R; 0]` and apply `Qᵀ` to `rhs`.
///
/// Returns `R`, the first `q` rows of `Qᵀ rhs` and the remaining rows.
/// `Q` itself is never materialized.
fn reduce(
    target: &DMatrix<f64>,
    mut rhs: DMatrix<f64>,
    at: Location,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let q = target.ncols();
    let rows = target.nrows();
    if rows < q {
        return Err(Error::DimensionMismatch(format!(
            "{at}: block has {rows} rows but {q} columns to factor"
        )));
    }
    let qr = target.clone().qr();
    let r = qr.r();
    check_rank(&r, at)?;
    qr.q_tr_mul(&mut rhs);
    let top = rhs.rows(0, q).into_owned();
    let bottom = rhs.rows(q, rows - q).into_owned();
    Ok((r, top, bottom))
}

fn hstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts[0].nrows();
    let cols: usize = parts.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for m in parts {
        out.columns_mut(c, m.ncols()).copy_from(m);
        c += m.ncols();
    }
    out
}

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn solve_upper(r: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    r.solve_upper_triangular(rhs)
        .expect("triangular factor already passed the rank check")
}

fn solve_upper_vec(r: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    r.solve_upper_triangular(rhs)
        .expect("triangular factor already passed the rank check")
}

/// `R⁻¹ R⁻ᵀ` by two triangular solves.
fn inv_gram(r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.ncols();
    let r_inv_t = r
        .tr_solve_upper_triangular(&DMatrix::identity(n, n))
        .expect("triangular factor already passed the rank check");
    let mut a = solve_upper(r, &r_inv_t);
    symmetrize(&mut a);
    a
}

/// `R⁻ᵀ`, used where the update subtracts from it before a final solve.
fn inv_t(r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.ncols();
    r.tr_solve_upper_triangular(&DMatrix::identity(n, n))
        .expect("triangular factor already passed the rank check")
}

/// Stack row blocks into a preallocated matrix.
fn vstack_owned(blocks: Vec<DMatrix<f64>>, cols: usize) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, cols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(&b);
        r += b.nrows();
    }
    out
}

impl TwoLevelSparseProblem {
    /// Checks the shape invariants and returns `(p, q)`.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let first = self
            .groups
            .first()
            .ok_or_else(|| Error::DimensionMismatch("problem has no groups".into()))?;
        let (p, q) = (first.b_mat.ncols(), first.b_dot.ncols());
        if p == 0 || q == 0 {
            return Err(Error::DimensionMismatch("p and q must be positive".into()));
        }
        let mut spare = 0usize;
        for (i, g) in self.groups.iter().enumerate() {
            let n = g.b.len();
            if g.b_mat.ncols() != p || g.b_dot.ncols() != q {
                return Err(Error::DimensionMismatch(format!(
                    "group {i}: expected {p} and {q} columns, got {} and {}",
                    g.b_mat.ncols(),
                    g.b_dot.ncols()
                )));
            }
            if g.b_mat.nrows() != n || g.b_dot.nrows() != n {
                return Err(Error::DimensionMismatch(format!("group {i}: row counts differ")));
            }
            if n < q {
                return Err(Error::DimensionMismatch(format!(
                    "group {i}: {n} rows cannot determine {q} group coefficients"
                )));
            }
            spare += n - q;
        }
        if spare < p {
            return Err(Error::DimensionMismatch(format!(
                "only {spare} rows remain for {p} shared coefficients"
            )));
        }
        Ok((p, q))
    }
}

/// Solve a two-level sparse least squares problem.
pub fn solve_two_level(problem: &TwoLevelSparseProblem) -> Result<TwoLevelSolution> {
    let (p, _q) = problem.dims()?;

    let reduced = problem
        .groups
        .par_iter()
        .enumerate()
        .map(|(i, g)| reduce(&g.b_dot, hstack(&[&col(&g.b), &g.b_mat]), Location::Group(i)))
        .collect::<Result<Vec<_>>>()?;

    let mut factors = Vec::with_capacity(reduced.len());
    let mut leftovers = Vec::with_capacity(reduced.len());
    for (r, top, bottom) in reduced {
        factors.push((r, top));
        leftovers.push(bottom);
    }
    let omega = vstack_owned(leftovers, 1 + p);
    let (r, top, _) = reduce(
        &omega.columns(1, p).into_owned(),
        omega.columns(0, 1).into_owned(),
        Location::Reduction,
    )?;
    drop(omega);

    let c = top.column(0).into_owned();
    let x1 = solve_upper_vec(&r, &c);
    let a11 = inv_gram(&r);
    let mut log_det_a = 2.0 * log_abs_diag(&r);

    let groups = factors
        .iter()
        .map(|(ri, top)| {
            let c1 = top.column(0).into_owned();
            let big_c1 = top.columns(1, p).into_owned();
            let x2 = solve_upper_vec(ri, &(c1 - &big_c1 * &x1));
            let w = solve_upper(ri, &big_c1);
            let a12 = -(&a11 * w.transpose());
            let mut a22 = solve_upper(ri, &(inv_t(ri) - &big_c1 * &a12));
            symmetrize(&mut a22);
            TwoLevelGroupSolution { x2, a22, a12 }
        })
        .collect();
    for (ri, _) in &factors {
        log_det_a += 2.0 * log_abs_diag(ri);
    }

    Ok(TwoLevelSolution { x1, a11, groups, log_det_a })
}

impl ThreeLevelSparseProblem {
    /// Checks the shape invariants and returns `(p, q1, q2)`.
    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        let first = self
            .groups
            .first()
            .and_then(|g| g.first())
            .ok_or_else(|| Error::DimensionMismatch("problem has no subgroups".into()))?;
        let (p, q1, q2) = (first.b_mat.ncols(), first.b_dot.ncols(), first.b_ddot.ncols());
        if p == 0 || q1 == 0 || q2 == 0 {
            return Err(Error::DimensionMismatch("p, q1 and q2 must be positive".into()));
        }
        let mut outer_spare = 0usize;
        for (i, group) in self.groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::DimensionMismatch(format!("group {i} has no subgroups")));
            }
            let mut inner_spare = 0usize;
            for (j, s) in group.iter().enumerate() {
                let n = s.b.len();
                if s.b_mat.ncols() != p || s.b_dot.ncols() != q1 || s.b_ddot.ncols() != q2 {
                    return Err(Error::DimensionMismatch(format!(
                        "group {i}, subgroup {j}: column counts differ from ({p}, {q1}, {q2})"
                    )));
                }
                if s.b_mat.nrows() != n || s.b_dot.nrows() != n || s.b_ddot.nrows() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "group {i}, subgroup {j}: row counts differ"
                    )));
                }
                if n < q2 {
                    return Err(Error::DimensionMismatch(format!(
                        "group {i}, subgroup {j}: {n} rows cannot determine {q2} coefficients"
                    )));
                }
                inner_spare += n - q2;
            }
            if inner_spare < q1 {
                return Err(Error::DimensionMismatch(format!(
                    "group {i}: only {inner_spare} rows remain for {q1} group coefficients"
                )));
            }
            outer_spare += inner_spare - q1;
        }
        if outer_spare < p {
            return Err(Error::DimensionMismatch(format!(
                "only {outer_spare} rows remain for {p} shared coefficients"
            )));
        }
        Ok((p, q1, q2))
    }
}

struct InnerFactor {
    r: DMatrix<f64>,
    d1: DVector<f64>,
    big_d1: DMatrix<f64>,
    dot_d1: DMatrix<f64>,
}

struct GroupFactor {
    r: DMatrix<f64>,
    c1: DVector<f64>,
    big_c1: DMatrix<f64>,
    inner: Vec<InnerFactor>,
    leftover: DMatrix<f64>,
}

fn reduce_three_level_group(
    i: usize,
    group: &[ThreeLevelBlock],
    p: usize,
    q1: usize,
) -> Result<GroupFactor> {
    let mut inner = Vec::with_capacity(group.len());
    let mut leftovers = Vec::with_capacity(group.len());
    for (j, s) in group.iter().enumerate() {
        let rhs = hstack(&[&col(&s.b), &s.b_mat, &s.b_dot]);
        let (r, top, bottom) = reduce(&s.b_ddot, rhs, Location::Subgroup(i, j))?;
        inner.push(InnerFactor {
            r,
            d1: top.column(0).into_owned(),
            big_d1: top.columns(1, p).into_owned(),
            dot_d1: top.columns(1 + p, q1).into_owned(),
        });
        leftovers.push(bottom);
    }
    let stacked = vstack_owned(leftovers, 1 + p + q1);
    let (r, top, bottom) = reduce(
        &stacked.columns(1 + p, q1).into_owned(),
        stacked.columns(0, 1 + p).into_owned(),
        Location::GroupReduction(i),
    )?;
    Ok(GroupFactor {
        r,
        c1: top.column(0).into_owned(),
        big_c1: top.columns(1, p).into_owned(),
        inner,
        leftover: bottom,
    })
}

/// Solve a three-level sparse least squares problem.
pub fn solve_three_level(problem: &ThreeLevelSparseProblem) -> Result<ThreeLevelSolution> {
    let (p, q1, _q2) = problem.dims()?;

    let mut factors = problem
        .groups
        .par_iter()
        .enumerate()
        .map(|(i, g)| reduce_three_level_group(i, g, p, q1))
        .collect::<Result<Vec<_>>>()?;

    let leftovers = factors
        .iter_mut()
        .map(|f| std::mem::replace(&mut f.leftover, DMatrix::zeros(0, 1 + p)))
        .collect();
    let omega = vstack_owned(leftovers, 1 + p);
    let (r, top, _) = reduce(
        &omega.columns(1, p).into_owned(),
        omega.columns(0, 1).into_owned(),
        Location::Reduction,
    )?;
    drop(omega);

    let x1 = solve_upper_vec(&r, &top.column(0).into_owned());
    let a11 = inv_gram(&r);
    let mut log_det_a = 2.0 * log_abs_diag(&r);

    let mut groups = Vec::with_capacity(factors.len());
    for f in &factors {
        log_det_a += 2.0 * log_abs_diag(&f.r);
        let x2 = solve_upper_vec(&f.r, &(&f.c1 - &f.big_c1 * &x1));
        let w = solve_upper(&f.r, &f.big_c1);
        let a12 = -(&a11 * w.transpose());
        let mut a22 = solve_upper(&f.r, &(inv_t(&f.r) - &f.big_c1 * &a12));
        symmetrize(&mut a22);

        let mut subgroups = Vec::with_capacity(f.inner.len());
        for s in &f.inner {
            log_det_a += 2.0 * log_abs_diag(&s.r);
            let x2_ij = solve_upper_vec(&s.r, &(&s.d1 - &s.big_d1 * &x1 - &s.dot_d1 * &x2));
            let a12_ij =
                -solve_upper(&s.r, &(&s.big_d1 * &a11 + &s.dot_d1 * a12.transpose())).transpose();
            let a12_cross = -solve_upper(&s.r, &(&s.big_d1 * &a12 + &s.dot_d1 * &a22)).transpose();
            let mut a22_ij =
                solve_upper(&s.r, &(inv_t(&s.r) - &s.big_d1 * &a12_ij - &s.dot_d1 * &a12_cross));
            symmetrize(&mut a22_ij);
            subgroups.push(ThreeLevelSubgroupSolution {
                x2: x2_ij,
                a22: a22_ij,
                a12: a12_ij,
                a12_cross,
            });
        }
        groups.push(ThreeLevelGroupSolution { x2, a22, a12, subgroups });
    }

    Ok(ThreeLevelSolution { x1, a11, groups, log_det_a })
}

/// Column layout of a stacked two-level problem: `[x1 | x2_1 | … | x2_m]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwoLevelLayout {
    pub p: usize,
    pub q: usize,
    pub m: usize,
}

/// Column layout of a stacked three-level problem:
/// `[x1 | x2_1, x2_11, …, x2_1n_1 | x2_2, x2_21, … ]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreeLevelLayout {
    pub p: usize,
    pub q1: usize,
    pub q2: usize,
    pub n: Vec<usize>,
}

impl ThreeLevelLayout {
    /// Column offset of group `i`'s block.
    pub fn group_offset(&self, i: usize) -> usize {
        self.p + self.n[..i].iter().map(|n| self.q1 + n * self.q2).sum::<usize>()
    }

    /// Column offset of subgroup `(i, j)`'s block.
    pub fn subgroup_offset(&self, i: usize, j: usize) -> usize {
        self.group_offset(i) + self.q1 + j * self.q2
    }

    pub fn total(&self) -> usize {
        self.group_offset(self.n.len())
    }
}

/// Explicitly stack a two-level problem into dense `(B, b)`.
pub fn stack_two_level(problem: &TwoLevelSparseProblem) -> Result<(DMatrix<f64>, DVector<f64>, TwoLevelLayout)> {
    let (p, q) = problem.dims()?;
    let m = problem.groups.len();
    let rows: usize = problem.groups.iter().map(|g| g.b.len()).sum();
    let mut big = DMatrix::zeros(rows, p + m * q);
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    for (i, g) in problem.groups.iter().enumerate() {
        let n = g.b.len();
        big.view_mut((r, 0), (n, p)).copy_from(&g.b_mat);
        big.view_mut((r, p + i * q), (n, q)).copy_from(&g.b_dot);
        b.rows_mut(r, n).copy_from(&g.b);
        r += n;
    }
    Ok((big, b, TwoLevelLayout { p, q, m }))
}

/// Explicitly stack a three-level problem into dense `(B, b)`.
pub fn stack_three_level(
    problem: &ThreeLevelSparseProblem,
) -> Result<(DMatrix<f64>, DVector<f64>, ThreeLevelLayout)> {
    let (p, q1, q2) = problem.dims()?;
    let layout = ThreeLevelLayout {
        p,
        q1,
        q2,
        n: problem.groups.iter().map(|g| g.len()).collect(),
    };
    let rows: usize = problem.groups.iter().flatten().map(|s| s.b.len()).sum();
    let mut big = DMatrix::zeros(rows, layout.total());
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    for (i, g) in problem.groups.iter().enumerate() {
        for (j, s) in g.iter().enumerate() {
            let n = s.b.len();
            big.view_mut((r, 0), (n, p)).copy_from(&s.b_mat);
            big.view_mut((r, layout.group_offset(i)), (n, q1)).copy_from(&s.b_dot);
            big.view_mut((r, layout.subgroup_offset(i, j)), (n, q2)).copy_from(&s.b_ddot);
            b.rows_mut(r, n).copy_from(&s.b);
            r += n;
        }
    }
    Ok((big, b, layout))
}

fn dense_normal(b_mat: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    if b_mat.nrows() != b.len() {
        return Err(Error::DimensionMismatch("B and b have different row counts".into()));
    }
    let a = b_mat.transpose() * b_mat;
    let (a_inv, log_det) = spd_inverse_logdet(&a, "BᵀB")?;
    let x = &a_inv * (b_mat.transpose() * b);
    Ok((x, a_inv, log_det))
}

/// Dense reference: forms `(BᵀB)⁻¹` in full and slices the labelled blocks.
pub fn dense_oracle_two_level(
    b_mat: &DMatrix<f64>,
    b: &DVector<f64>,
    layout: TwoLevelLayout,
) -> Result<TwoLevelSolution> {
    let TwoLevelLayout { p, q, m } = layout;
    if b_mat.ncols() != p + m * q {
        return Err(Error::DimensionMismatch("B does not match the layout".into()));
    }
    let (x, a_inv, log_det_a) = dense_normal(b_mat, b)?;
    let groups = (0..m)
        .map(|i| {
            let o = p + i * q;
            TwoLevelGroupSolution {
                x2: x.rows(o, q).into_owned(),
                a22: a_inv.view((o, o), (q, q)).into_owned(),
                a12: a_inv.view((0, o), (p, q)).into_owned(),
            }
        })
        .collect();
    Ok(TwoLevelSolution {
        x1: x.rows(0, p).into_owned(),
        a11: a_inv.view((0, 0), (p, p)).into_owned(),
        groups,
        log_det_a,
    })
}

/// Dense reference for the three-level layout.
pub fn dense_oracle_three_level(
    b_mat: &DMatrix<f64>,
    b: &DVector<f64>,
    layout: &ThreeLevelLayout,
) -> Result<ThreeLevelSolution> {
    let (p, q1, q2) = (layout.p, layout.q1, layout.q2);
    if b_mat.ncols() != layout.total() {
        return Err(Error::DimensionMismatch("B does not match the layout".into()));
    }
    let (x, a_inv, log_det_a) = dense_normal(b_mat, b)?;
    let groups = layout
        .n
        .iter()
        .enumerate()
        .map(|(i, &ni)| {
            let og = layout.group_offset(i);
            let subgroups = (0..ni)
                .map(|j| {
                    let os = layout.subgroup_offset(i, j);
                    ThreeLevelSubgroupSolution {
                        x2: x.rows(os, q2).into_owned(),
                        a22: a_inv.view((os, os), (q2, q2)).into_owned(),
                        a12: a_inv.view((0, os), (p, q2)).into_owned(),
                        a12_cross: a_inv.view((og, os), (q1, q2)).into_owned(),
                    }
                })
                .collect();
            ThreeLevelGroupSolution {
                x2: x.rows(og, q1).into_owned(),
                a22: a_inv.view((og, og), (q1, q1)).into_owned(),
                a12: a_inv.view((0, og), (p, q1)).into_owned(),
                subgroups,
            }
        })
        .collect();
    Ok(ThreeLevelSolution {
        x1: x.rows(0, p).into_owned(),
        a11: a_inv.view((0, 0), (p, p)).into_owned(),
        groups,
        log_det_a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_full_identity() {
        let (q, r) = qr_full(&DMatrix::identity(3, 3)).unwrap();
        assert!((q.abs() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
        assert!((r.abs() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn qr_full_pythagorean_column() {
        let (q, r) = qr_full(&DMatrix::from_column_slice(2, 1, &[3.0, 4.0])).unwrap();
        assert!((r[(0, 0)].abs() - 5.0).abs() < 1e-14);
        assert!((q.transpose() * &q - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn qr_full_rejects_duplicated_columns() {
        let mut m = DMatrix::from_fn(6, 3, |i, j| ((i * 3 + j) as f64).sin());
        let c0 = m.column(0).into_owned();
        m.set_column(2, &c0);
        assert!(matches!(qr_full(&m), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn single_group_orthogonal_unit_columns() {
        let problem = TwoLevelSparseProblem {
            groups: vec![TwoLevelBlock {
                b: DVector::from_vec(vec![1.0, 2.0]),
                b_mat: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
                b_dot: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            }],
        };
        let s = solve_two_level(&problem).unwrap();
        assert!((s.x1[0] - 1.0).abs() < 1e-14);
        assert!((s.groups[0].x2[0] - 2.0).abs() < 1e-14);
        assert!((s.a11[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((s.groups[0].a22[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(s.groups[0].a12[(0, 0)].abs() < 1e-14);
        assert!(s.log_det_a.abs() < 1e-14);
    }

    #[test]
    fn three_level_orthogonal_unit_columns() {
        let e = |k: usize| DMatrix::from_fn(3, 1, |r, _| if r == k { 1.0 } else { 0.0 });
        let problem = ThreeLevelSparseProblem {
            groups: vec![vec![ThreeLevelBlock {
                b: DVector::from_vec(vec![4.0, 5.0, 6.0]),
                b_mat: e(0),
                b_dot: e(1),
                b_ddot: e(2),
            }]],
        };
        let s = solve_three_level(&problem).unwrap();
        assert!((s.x1[0] - 4.0).abs() < 1e-14);
        assert!((s.groups[0].x2[0] - 5.0).abs() < 1e-14);
        assert!((s.groups[0].subgroups[0].x2[0] - 6.0).abs() < 1e-14);
        assert!((s.a11[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((s.groups[0].a22[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((s.groups[0].subgroups[0].a22[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(s.groups[0].a12[(0, 0)].abs() < 1e-14);
        assert!(s.groups[0].subgroups[0].a12[(0, 0)].abs() < 1e-14);
        assert!(s.groups[0].subgroups[0].a12_cross[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn too_few_rows_is_rejected() {
        let problem = TwoLevelSparseProblem {
            groups: vec![TwoLevelBlock {
                b: DVector::from_vec(vec![1.0]),
                b_mat: DMatrix::from_column_slice(1, 1, &[1.0]),
                b_dot: DMatrix::from_column_slice(1, 1, &[1.0]),
            }],
        };
        assert!(matches!(solve_two_level(&problem), Err(Error::DimensionMismatch(_))));
    }
}
