//! Helpers shared by the integration tests: random problem generators and
//! dense reference computations written directly from the model matrices.
#![allow(dead_code)]

use curvestream::design::{ThreeLevelDesign, ThreeLevelPrecisions, TwoLevelDesign, TwoLevelPrecisions};
use curvestream::mfvb::{QStateThreeLevel, QStateTwoLevel, ScaleFactor};
use curvestream::solvers::{
    ThreeLevelBlock, ThreeLevelLayout, ThreeLevelSolution, ThreeLevelSparseProblem, TwoLevelBlock, TwoLevelSolution,
    TwoLevelSparseProblem,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    let normal = rand_distr::StandardNormal;
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(normal))
}

/// Frobenius relative error of `a` against the reference `b`.
pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_v(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_s(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Random two-level problem with `p, q ≤ 6`, `m ≤ 8` and at most 12 rows
/// per group, always of full column rank in exact arithmetic.
pub fn random_two_level(seed: u64) -> TwoLevelSparseProblem {
    let mut r = rng(seed);
    let p = r.random_range(1..=6);
    let q = r.random_range(1..=6);
    let m = r.random_range(1..=8);
    let rows = loop {
        let rows: Vec<usize> = (0..m).map(|_| r.random_range(q..=12)).collect();
        if rows.iter().map(|n| n - q).sum::<usize>() >= p {
            break rows;
        }
    };
    let groups = rows
        .into_iter()
        .map(|n| TwoLevelBlock {
            b: gaussian_matrix(&mut r, n, 1).column(0).into_owned(),
            b_mat: gaussian_matrix(&mut r, n, p),
            b_dot: gaussian_matrix(&mut r, n, q),
        })
        .collect();
    TwoLevelSparseProblem { groups }
}

/// Random three-level problem with `p, q1, q2 ≤ 6`, `m ≤ 8`, at most four
/// subgroups per group and at most 12 rows per subgroup.
pub fn random_three_level(seed: u64) -> ThreeLevelSparseProblem {
    let mut r = rng(seed);
    loop {
        let p = r.random_range(1..=6);
        let q1 = r.random_range(1..=6);
        let q2 = r.random_range(1..=6);
        let m = r.random_range(1..=8);
        let rows: Vec<Vec<usize>> = (0..m)
            .map(|_| {
                let n = r.random_range(1..=4);
                (0..n).map(|_| r.random_range(q2..=12)).collect()
            })
            .collect();
        // Rows left over after each level's own unknowns.
        let spare_g: Vec<isize> =
            rows.iter().map(|g| g.iter().map(|o| (o - q2) as isize).sum::<isize>() - q1 as isize).collect();
        if spare_g.iter().any(|&s| s < 0) || spare_g.iter().sum::<isize>() < p as isize {
            continue;
        }
        let groups = rows
            .into_iter()
            .map(|g| {
                g.into_iter()
                    .map(|o| ThreeLevelBlock {
                        b: gaussian_matrix(&mut r, o, 1).column(0).into_owned(),
                        b_mat: gaussian_matrix(&mut r, o, p),
                        b_dot: gaussian_matrix(&mut r, o, q1),
                        b_ddot: gaussian_matrix(&mut r, o, q2),
                    })
                    .collect()
            })
            .collect();
        return ThreeLevelSparseProblem { groups };
    }
}

/// Largest relative error over every labelled block of two solutions.
pub fn max_rel_two_level(a: &TwoLevelSolution, b: &TwoLevelSolution) -> f64 {
    let mut e = rel_v(&a.x1, &b.x1).max(rel(&a.a11, &b.a11));
    for (ga, gb) in a.groups.iter().zip(&b.groups) {
        e = e.max(rel_v(&ga.x2, &gb.x2)).max(rel(&ga.a22, &gb.a22)).max(rel(&ga.a12, &gb.a12));
    }
    e.max(rel_s(a.log_det_a, b.log_det_a))
}

pub fn max_rel_three_level(a: &ThreeLevelSolution, b: &ThreeLevelSolution) -> f64 {
    let mut e = rel_v(&a.x1, &b.x1).max(rel(&a.a11, &b.a11));
    for (ga, gb) in a.groups.iter().zip(&b.groups) {
        e = e.max(rel_v(&ga.x2, &gb.x2)).max(rel(&ga.a22, &gb.a22)).max(rel(&ga.a12, &gb.a12));
        for (sa, sb) in ga.subgroups.iter().zip(&gb.subgroups) {
            e = e
                .max(rel_v(&sa.x2, &sb.x2))
                .max(rel(&sa.a22, &sb.a22))
                .max(rel(&sa.a12, &sb.a12))
                .max(rel(&sa.a12_cross, &sb.a12_cross));
        }
    }
    e.max(rel_s(a.log_det_a, b.log_det_a))
}

/// Stacked `C` over all coefficients `[β, u_gbl | u_1 | … | u_m]` and the
/// stacked response.
pub fn stacked_c_two_level(design: &TwoLevelDesign) -> (DMatrix<f64>, DVector<f64>) {
    let (p, q, m) = (design.p(), design.q(), design.m());
    let n = design.n_obs();
    let mut c = DMatrix::zeros(n, p + m * q);
    let mut y = DVector::zeros(n);
    let mut r = 0;
    for (i, g) in design.groups.iter().enumerate() {
        let ni = g.y.len();
        c.view_mut((r, 0), (ni, p)).copy_from(&g.c_gbl);
        c.view_mut((r, p + i * q), (ni, q)).copy_from(&g.c_grp);
        y.rows_mut(r, ni).copy_from(&g.y);
        r += ni;
    }
    (c, y)
}

/// Dense `D` and prior right-hand side `o` for the two-level precisions.
pub fn prior_two_level(design: &TwoLevelDesign, prec: &TwoLevelPrecisions) -> (DMatrix<f64>, DVector<f64>) {
    let (p, q, m) = (design.p(), design.q(), design.m());
    let (pf, d) = (design.n_fixed, design.n_lin);
    let dim = p + m * q;
    let mut dm = DMatrix::zeros(dim, dim);
    let mut o = DVector::zeros(dim);
    if let Some(b) = &prec.beta {
        dm.view_mut((0, 0), (pf, pf)).copy_from(&(b.root.transpose() * &b.root));
        o.rows_mut(0, pf).copy_from(&(b.root.transpose() * &b.root_mu));
    }
    let mut at = pf;
    for (&k, &v) in design.gbl_segments.iter().zip(&prec.gbl) {
        for t in 0..k {
            dm[(at + t, at + t)] = v;
        }
        at += k;
    }
    for i in 0..m {
        let base = p + i * q;
        dm.view_mut((base, base), (d, d)).copy_from(&prec.lin);
        for t in d..q {
            dm[(base + t, base + t)] = prec.grp;
        }
    }
    (dm, o)
}

/// Mean and covariance of `N(A⁻¹ r, A⁻¹)`, `A = noise CᵀC + D`,
/// `r = noise Cᵀy + o`.
pub fn dense_posterior_two_level(design: &TwoLevelDesign, prec: &TwoLevelPrecisions) -> (DVector<f64>, DMatrix<f64>) {
    let (c, y) = stacked_c_two_level(design);
    let (dm, o) = prior_two_level(design, prec);
    let a = c.transpose() * &c * prec.noise + dm;
    let cov = a.try_inverse().expect("dense precision is invertible");
    let mu = &cov * (c.transpose() * y * prec.noise + o);
    (mu, cov)
}

pub fn layout_three_level(design: &ThreeLevelDesign) -> ThreeLevelLayout {
    ThreeLevelLayout {
        p: design.p(),
        q1: design.q1(),
        q2: design.q2(),
        n: design.groups.iter().map(|g| g.len()).collect(),
    }
}

pub fn dense_posterior_three_level(
    design: &ThreeLevelDesign,
    prec: &ThreeLevelPrecisions,
) -> (DVector<f64>, DMatrix<f64>, ThreeLevelLayout) {
    let lay = layout_three_level(design);
    let (p, q1, q2) = (lay.p, lay.q1, lay.q2);
    let dim = lay.total();
    let n = design.n_obs();
    let mut c = DMatrix::zeros(n, dim);
    let mut y = DVector::zeros(n);
    let mut r = 0;
    for (i, g) in design.groups.iter().enumerate() {
        for (j, s) in g.iter().enumerate() {
            let o = s.y.len();
            c.view_mut((r, 0), (o, p)).copy_from(&s.c_gbl);
            c.view_mut((r, lay.group_offset(i)), (o, q1)).copy_from(&s.c_g);
            c.view_mut((r, lay.subgroup_offset(i, j)), (o, q2)).copy_from(&s.c_h);
            y.rows_mut(r, o).copy_from(&s.y);
            r += o;
        }
    }
    let mut dm = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    if let Some(b) = &prec.beta {
        dm.view_mut((0, 0), (2, 2)).copy_from(&(b.root.transpose() * &b.root));
        rhs.rows_mut(0, 2).copy_from(&(b.root.transpose() * &b.root_mu));
    }
    for t in 2..p {
        dm[(t, t)] = prec.gbl;
    }
    for (i, g) in design.groups.iter().enumerate() {
        let og = lay.group_offset(i);
        dm.view_mut((og, og), (2, 2)).copy_from(&prec.lin_g);
        for t in 2..q1 {
            dm[(og + t, og + t)] = prec.grp_g;
        }
        for j in 0..g.len() {
            let os = lay.subgroup_offset(i, j);
            dm.view_mut((os, os), (2, 2)).copy_from(&prec.lin_h);
            for t in 2..q2 {
                dm[(os + t, os + t)] = prec.grp_h;
            }
        }
    }
    let a = c.transpose() * &c * prec.noise + dm;
    let cov = a.try_inverse().expect("dense precision is invertible");
    let mu = &cov * (c.transpose() * y * prec.noise + rhs);
    (mu, cov, lay)
}

fn scale_rel(a: &ScaleFactor, b: &ScaleFactor) -> f64 {
    rel_s(a.xi, b.xi).max(rel_s(a.lambda, b.lambda)).max(rel_s(a.recip, b.recip))
}

/// Largest relative difference over every variational parameter.
pub fn state_rel_two_level(a: &QStateTwoLevel, b: &QStateTwoLevel) -> f64 {
    let mut e = max_rel_two_level(&a.coef, &b.coef);
    for (x, y) in [(&a.noise, &b.noise), (&a.noise_aux, &b.noise_aux), (&a.grp, &b.grp), (&a.grp_aux, &b.grp_aux)] {
        e = e.max(scale_rel(x, y));
    }
    for (x, y) in a.gbl.iter().zip(&b.gbl).chain(a.gbl_aux.iter().zip(&b.gbl_aux)) {
        e = e.max(scale_rel(x, y));
    }
    for (x, y) in [(&a.lin, &b.lin), (&a.lin_aux, &b.lin_aux)] {
        e = e.max(rel_s(x.xi, y.xi)).max(rel(&x.lambda, &y.lambda)).max(rel(&x.m, &y.m));
    }
    e
}

pub fn state_rel_three_level(a: &QStateThreeLevel, b: &QStateThreeLevel) -> f64 {
    let mut e = max_rel_three_level(&a.coef, &b.coef);
    let pairs = [
        (&a.noise, &b.noise),
        (&a.noise_aux, &b.noise_aux),
        (&a.gbl, &b.gbl),
        (&a.gbl_aux, &b.gbl_aux),
        (&a.grp_g, &b.grp_g),
        (&a.grp_g_aux, &b.grp_g_aux),
        (&a.grp_h, &b.grp_h),
        (&a.grp_h_aux, &b.grp_h_aux),
    ];
    for (x, y) in pairs {
        e = e.max(scale_rel(x, y));
    }
    for (x, y) in [(&a.lin_g, &b.lin_g), (&a.lin_g_aux, &b.lin_g_aux), (&a.lin_h, &b.lin_h), (&a.lin_h_aux, &b.lin_h_aux)] {
        e = e.max(rel_s(x.xi, y.xi)).max(rel(&x.lambda, &y.lambda)).max(rel(&x.m, &y.m));
    }
    e
}
