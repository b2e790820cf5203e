mod common;

use common::{dense_posterior_three_level, dense_posterior_two_level, max_rel_two_level, rel};
use curvestream::blup::*;
use curvestream::data::{Group, TwoLevelData};
use curvestream::design::{
    linspace, GroupDesign, Layout, SubgroupDesign, ThreeLevelDesign, ThreeLevelPrecisions, TwoLevelDesign,
    TwoLevelPrecisions,
};
use curvestream::predict::{credible_band_two_level, predict_three_level, predict_two_level, Target};
use curvestream::simbench::{simulate_three_level, simulate_two_level, SimConfig, ThreeLevelSimConfig};
use curvestream::solvers::{solve_two_level, stack_three_level, stack_two_level};
use curvestream::splines::SplineBasis;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn small_two_level(m: usize, seed: u64) -> TwoLevelDesign {
    let mut cfg = SimConfig::new(m, seed);
    cfg.n_range = (8, 14);
    TwoLevelDesign::new(&simulate_two_level(&cfg), 6, 4).unwrap()
}

fn small_three_level(m: usize, seed: u64) -> ThreeLevelDesign {
    let mut cfg = ThreeLevelSimConfig::new(m, seed);
    cfg.n_range = (2, 3);
    cfg.o_range = (8, 12);
    ThreeLevelDesign::new(&simulate_three_level(&cfg), 6, 4, 3).unwrap()
}

fn var2() -> VarianceParamsTwoLevel {
    VarianceParamsTwoLevel {
        sigma_eps_sq: 0.04,
        sigma_gbl_sq: 2.0,
        sigma_grp_sq: 0.5,
        sigma: DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]),
    }
}

fn var3() -> VarianceParamsThreeLevel {
    VarianceParamsThreeLevel {
        sigma_eps_sq: 0.04,
        sigma_gbl_sq: 2.0,
        sigma_grp_g_sq: 0.5,
        sigma_grp_h_sq: 0.25,
        sigma_g: DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]),
        sigma_h: DMatrix::from_row_slice(2, 2, &[0.1, -0.02, -0.02, 0.08]),
    }
}

/// Precisions written out from the variances, without the library's
/// conversion.
fn prec2(v: &VarianceParamsTwoLevel) -> TwoLevelPrecisions {
    TwoLevelPrecisions {
        noise: 1.0 / v.sigma_eps_sq,
        beta: None,
        gbl: vec![1.0 / v.sigma_gbl_sq],
        lin: v.sigma.clone().try_inverse().unwrap(),
        grp: 1.0 / v.sigma_grp_sq,
    }
}

fn prec3(v: &VarianceParamsThreeLevel) -> ThreeLevelPrecisions {
    ThreeLevelPrecisions {
        noise: 1.0 / v.sigma_eps_sq,
        beta: None,
        gbl: 1.0 / v.sigma_gbl_sq,
        lin_g: v.sigma_g.clone().try_inverse().unwrap(),
        grp_g: 1.0 / v.sigma_grp_g_sq,
        lin_h: v.sigma_h.clone().try_inverse().unwrap(),
        grp_h: 1.0 / v.sigma_grp_h_sq,
    }
}

fn placeholder_basis() -> SplineBasis {
    SplineBasis::from_data(&linspace(0.0, 1.0, 10), 3).unwrap()
}

/// Two-level design from explicit column widths, for shape checks with
/// spline widths a real basis cannot have.
fn shaped_two_level(m: usize, n: usize, k_gbl: usize, k_grp: usize, seed: u64) -> TwoLevelDesign {
    let mut rng = common::rng(seed);
    let groups = (0..m)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut c_gbl = DMatrix::from_fn(n, 2 + k_gbl, |_, _| rng.random::<f64>());
            let mut c_grp = DMatrix::from_fn(n, 2 + k_grp, |_, _| rng.random::<f64>());
            for (r, &v) in x.iter().enumerate() {
                c_gbl[(r, 0)] = 1.0;
                c_gbl[(r, 1)] = v;
                c_grp[(r, 0)] = 1.0;
                c_grp[(r, 1)] = v;
            }
            GroupDesign { y: DVector::from_fn(n, |_, _| rng.random::<f64>()), c_gbl, c_grp }
        })
        .collect();
    TwoLevelDesign {
        layout: Layout::Standard,
        labels: (0..m).map(|i| format!("g{i}")).collect(),
        groups,
        n_fixed: 2,
        gbl_segments: vec![k_gbl],
        n_lin: 2,
        basis_gbl: placeholder_basis(),
        basis_grp: placeholder_basis(),
        x_range: (0.0, 1.0),
    }
}

#[test]
fn block_shapes_follow_the_column_counts() {
    let design = shaped_two_level(2, 3, 2, 1, 1);
    let problem = build_two_level_blup_blocks(&design, &var2()).unwrap();
    for g in &problem.groups {
        assert_eq!(g.b.len(), 8);
        assert_eq!(g.b_mat.ncols(), 4);
        assert_eq!(g.b_dot.ncols(), 3);
    }
}

#[test]
fn unit_scales_copy_the_design() {
    let design = shaped_two_level(1, 5, 3, 2, 2);
    let unit = VarianceParamsTwoLevel {
        sigma_eps_sq: 1.0,
        sigma_gbl_sq: 1.0,
        sigma_grp_sq: 1.0,
        sigma: DMatrix::identity(2, 2),
    };
    let problem = build_two_level_blup_blocks(&design, &unit).unwrap();
    let g = &problem.groups[0];
    assert_eq!(g.b_mat.rows(0, 5), design.groups[0].c_gbl);
    assert_eq!(g.b_dot.rows(0, 5), design.groups[0].c_grp);
    assert_eq!(g.b_mat.view((5, 2), (3, 3)), DMatrix::<f64>::identity(3, 3));
    assert_eq!(g.b_dot.view((8, 0), (4, 4)), DMatrix::<f64>::identity(4, 4));
}

#[test]
fn stacked_normal_matrix_equals_the_mixed_model_form() {
    let design = small_two_level(3, 4);
    let var = var2();
    let (big, _, _) = stack_two_level(&build_two_level_blup_blocks(&design, &var).unwrap()).unwrap();
    let btb = big.transpose() * &big;
    let (c, _) = common::stacked_c_two_level(&design);
    let (d, _) = common::prior_two_level(&design, &prec2(&var));
    let direct = c.transpose() * &c / var.sigma_eps_sq + d;
    assert!((&btb - &direct).amax() <= 1e-12 * direct.amax());
}

fn check_two_level_against_dense(design: &TwoLevelDesign) {
    let var = var2();
    let fit = fit_blup_two_level(design, &var).unwrap();
    let (mu, cov) = dense_posterior_two_level(design, &prec2(&var));
    let (p, q) = (design.p(), design.q());
    assert!(common::rel_v(&fit.solution.x1, &mu.rows(0, p).into_owned()) < 1e-8);
    assert!(rel(&fit.solution.a11, &cov.view((0, 0), (p, p)).into_owned()) < 1e-8);
    for (i, g) in fit.solution.groups.iter().enumerate() {
        let o = p + i * q;
        assert!(common::rel_v(&g.x2, &mu.rows(o, q).into_owned()) < 1e-8);
        assert!(rel(&g.a22, &cov.view((o, o), (q, q)).into_owned()) < 1e-8);
        assert!(rel(&g.a12, &cov.view((0, o), (p, q)).into_owned()) < 1e-8);
    }
}

#[test]
fn fit_equals_dense_blup() {
    check_two_level_against_dense(&small_two_level(5, 11));
}

#[test]
fn single_group_fit_equals_dense_blup() {
    check_two_level_against_dense(&small_two_level(1, 12));
}

#[test]
fn prediction_variance_equals_dense_quadratic_form() {
    let design = small_two_level(5, 13);
    let var = var2();
    let fit = fit_blup_two_level(&design, &var).unwrap();
    let (_, cov) = dense_posterior_two_level(&design, &prec2(&var));
    let (p, q) = (design.p(), design.q());
    let grid = design.default_grid(5);
    let (_, sd_gbl) = predict_two_level(&design, &fit.solution, &grid, Target::Global).unwrap();
    let (_, sd_grp) = predict_two_level(&design, &fit.solution, &grid, Target::Group(3)).unwrap();
    for (k, &x) in grid.iter().enumerate() {
        let zg = design.basis_gbl.evaluate_one(x).unwrap();
        let zr = design.basis_grp.evaluate_one(x).unwrap();
        let mut c = DVector::zeros(cov.nrows());
        c[0] = 1.0;
        c[1] = x;
        c.rows_mut(2, p - 2).copy_from(&zg);
        let v_gbl = c.dot(&(&cov * &c));
        let o = p + 3 * q;
        c[o] = 1.0;
        c[o + 1] = x;
        c.rows_mut(o + 2, q - 2).copy_from(&zr);
        let v_grp = c.dot(&(&cov * &c));
        assert!((sd_gbl[k].powi(2) - v_gbl).abs() <= 1e-8 * v_gbl);
        assert!((sd_grp[k].powi(2) - v_grp).abs() <= 1e-8 * v_grp);
        assert!(sd_gbl[k] > 0.0 && sd_grp[k] > 0.0);
    }
}

#[test]
fn noiseless_data_are_reproduced() {
    let base = small_two_level(4, 14);
    let mut rng = common::rng(3);
    let theta = DVector::from_fn(base.p(), |_, _| rng.random::<f64>() - 0.5);
    let mut design = base.clone();
    for g in design.groups.iter_mut() {
        let u = DVector::from_fn(base.q(), |_, _| rng.random::<f64>() - 0.5);
        g.y = &g.c_gbl * &theta + &g.c_grp * u;
    }
    let mut var = var2();
    var.sigma_eps_sq = 1e-12;
    let fit = fit_blup_two_level(&design, &var).unwrap();
    for (g, s) in design.groups.iter().zip(&fit.solution.groups) {
        let fitted = &g.c_gbl * &fit.solution.x1 + &g.c_grp * &s.x2;
        assert!((fitted - &g.y).amax() < 1e-4);
    }
}

#[test]
fn tiny_group_spline_variance_shrinks_group_splines() {
    let design = small_two_level(6, 15);
    let loose = fit_blup_two_level(&design, &var2()).unwrap();
    let mut v = var2();
    v.sigma_grp_sq *= 1e-6;
    let tight = fit_blup_two_level(&design, &v).unwrap();
    for i in 0..design.m() {
        assert!(tight.u_grp(i).norm() < loose.u_grp(i).norm());
    }
}

#[test]
fn mirrored_groups_give_mirrored_curves() {
    let mut rng = common::rng(21);
    let x: Vec<f64> = (0..25).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let y: Vec<f64> = x.iter().map(|v| v.powi(3) + (3.0 * v).sin() + 0.1 * rng.random::<f64>()).collect();
    let data = TwoLevelData {
        groups: vec![
            Group { label: "a".into(), x: x.clone(), y: y.clone() },
            Group { label: "b".into(), x: x.iter().map(|v| -v).collect(), y },
        ],
    };
    let design = TwoLevelDesign::new(&data, 8, 5).unwrap();
    let mut var = var2();
    var.sigma = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.2]);
    let fit = fit_blup_two_level(&design, &var).unwrap();
    let grid: Vec<f64> = linspace(-0.9, 0.9, 7);
    let neg: Vec<f64> = grid.iter().map(|v| -v).collect();
    let (ma, sa) = predict_two_level(&design, &fit.solution, &grid, Target::Group(0)).unwrap();
    let (mb, sb) = predict_two_level(&design, &fit.solution, &neg, Target::Group(1)).unwrap();
    for k in 0..grid.len() {
        assert!((ma[k] - mb[k]).abs() < 1e-8, "{} vs {}", ma[k], mb[k]);
        assert!((sa[k] - sb[k]).abs() < 1e-8);
    }
}

#[test]
fn ninety_nine_percent_band_is_wider() {
    let design = small_two_level(4, 16);
    let fit = fit_blup_two_level(&design, &var2()).unwrap();
    let grid = design.default_grid(9);
    let b95 = credible_band_two_level(&design, &fit.solution, &grid, Target::Group(1), 0.95).unwrap();
    let b99 = credible_band_two_level(&design, &fit.solution, &grid, Target::Group(1), 0.99).unwrap();
    let b0 = credible_band_two_level(&design, &fit.solution, &grid, Target::Group(1), 0.0).unwrap();
    for k in 0..grid.len() {
        assert!(b99.upper[k] - b99.lower[k] > b95.upper[k] - b95.lower[k]);
        assert_eq!(b0.upper[k], b0.lower[k]);
    }
}

#[test]
fn three_level_block_shapes() {
    let mut rng = common::rng(31);
    let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random::<f64>());
    let sub = SubgroupDesign { y: draw(4, 1).column(0).into_owned(), c_gbl: draw(4, 4), c_g: draw(4, 3), c_h: draw(4, 3) };
    let design = ThreeLevelDesign {
        labels: vec!["g".into()],
        sub_labels: vec![vec!["h".into()]],
        groups: vec![vec![sub.clone()]],
        basis_gbl: placeholder_basis(),
        basis_g: placeholder_basis(),
        basis_h: placeholder_basis(),
        x_range: (0.0, 1.0),
    };
    let problem = build_three_level_blup_blocks(&design, &var3()).unwrap();
    assert_eq!(problem.groups[0][0].b.len(), 12);

    let unit = VarianceParamsThreeLevel {
        sigma_eps_sq: 1.0,
        sigma_gbl_sq: 1.0,
        sigma_grp_g_sq: 1.0,
        sigma_grp_h_sq: 1.0,
        sigma_g: DMatrix::identity(2, 2),
        sigma_h: DMatrix::identity(2, 2),
    };
    let b = &build_three_level_blup_blocks(&design, &unit).unwrap().groups[0][0];
    assert_eq!(b.b_mat.rows(0, 4), sub.c_gbl);
    assert_eq!(b.b_mat.view((4, 2), (2, 2)), DMatrix::<f64>::identity(2, 2));
    assert_eq!(b.b_dot.view((6, 0), (3, 3)), DMatrix::<f64>::identity(3, 3));
    assert_eq!(b.b_ddot.view((9, 0), (3, 3)), DMatrix::<f64>::identity(3, 3));
}

#[test]
fn three_level_normal_matrix_equals_the_mixed_model_form() {
    let design = small_three_level(3, 5);
    let var = var3();
    let (big, _, _) = stack_three_level(&build_three_level_blup_blocks(&design, &var).unwrap()).unwrap();
    let btb = big.transpose() * &big;
    // A = noise CᵀC + D, so its inverse is the dense covariance.
    let (_, cov, _) = dense_posterior_three_level(&design, &prec3(&var));
    let direct = cov.try_inverse().unwrap();
    assert!((&btb - &direct).amax() <= 1e-9 * direct.amax());
}

#[test]
fn three_level_fit_and_predictions_equal_dense() {
    let design = small_three_level(3, 6);
    let var = var3();
    let fit = fit_blup_three_level(&design, &var).unwrap();
    let (mu, cov, lay) = dense_posterior_three_level(&design, &prec3(&var));
    let (p, q1, q2) = (lay.p, lay.q1, lay.q2);
    let sol = &fit.solution;
    assert!(common::rel_v(&sol.x1, &mu.rows(0, p).into_owned()) < 1e-8);
    assert!(rel(&sol.a11, &cov.view((0, 0), (p, p)).into_owned()) < 1e-8);
    for (i, g) in sol.groups.iter().enumerate() {
        let og = lay.group_offset(i);
        assert!(common::rel_v(&g.x2, &mu.rows(og, q1).into_owned()) < 1e-8);
        assert!(rel(&g.a22, &cov.view((og, og), (q1, q1)).into_owned()) < 1e-8);
        assert!(rel(&g.a12, &cov.view((0, og), (p, q1)).into_owned()) < 1e-8);
        for (j, s) in g.subgroups.iter().enumerate() {
            let os = lay.subgroup_offset(i, j);
            assert!(common::rel_v(&s.x2, &mu.rows(os, q2).into_owned()) < 1e-8);
            assert!(rel(&s.a22, &cov.view((os, os), (q2, q2)).into_owned()) < 1e-8);
            assert!(rel(&s.a12, &cov.view((0, os), (p, q2)).into_owned()) < 1e-8);
            assert!(rel(&s.a12_cross, &cov.view((og, os), (q1, q2)).into_owned()) < 1e-8);
        }
    }

    let grid = design.default_grid(5);
    let (_, sd) = predict_three_level(&design, sol, &grid, Target::Subgroup(1, 1)).unwrap();
    let (og, os) = (lay.group_offset(1), lay.subgroup_offset(1, 1));
    for (k, &x) in grid.iter().enumerate() {
        let mut c = DVector::zeros(cov.nrows());
        for (o, basis, w) in [(0, &design.basis_gbl, p), (og, &design.basis_g, q1), (os, &design.basis_h, q2)] {
            c[o] = 1.0;
            c[o + 1] = x;
            c.rows_mut(o + 2, w - 2).copy_from(&basis.evaluate_one(x).unwrap());
        }
        let v = c.dot(&(&cov * &c));
        assert!((sd[k].powi(2) - v).abs() <= 1e-8 * v);
    }
}

#[test]
fn single_group_single_subgroup_runs() {
    let mut cfg = ThreeLevelSimConfig::new(1, 2);
    cfg.n_range = (1, 1);
    cfg.o_range = (20, 20);
    let design = ThreeLevelDesign::new(&simulate_three_level(&cfg), 5, 4, 3).unwrap();
    let fit = fit_blup_three_level(&design, &var3()).unwrap();
    let (mu, _, _) = dense_posterior_three_level(&design, &prec3(&var3()));
    assert!(common::rel_v(&fit.solution.x1, &mu.rows(0, design.p()).into_owned()) < 1e-8);
}

#[test]
fn ultrasound_dimensions_fit() {
    let mut cfg = ThreeLevelSimConfig::new(10, 8);
    cfg.n_range = (5, 5);
    cfg.o_range = (128, 128);
    let design = ThreeLevelDesign::new(&simulate_three_level(&cfg), 20, 10, 10).unwrap();
    let fit = fit_blup_three_level(&design, &var3()).unwrap();
    assert_eq!(fit.solution.groups.len(), 10);
    assert_eq!(design.n_obs(), 6400);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn streamlined_equals_dense_on_random_instances(seed in any::<u64>(), m in 1usize..=8) {
        let design = small_two_level(m, seed);
        let var = var2();
        let fit = fit_blup_two_level(&design, &var).unwrap();
        let (big, b, layout) = stack_two_level(&build_two_level_blup_blocks(&design, &var).unwrap()).unwrap();
        let dense = curvestream::solvers::dense_oracle_two_level(&big, &b, layout).unwrap();
        prop_assert!(max_rel_two_level(&fit.solution, &dense) < 1e-8);
        let grid = design.default_grid(7);
        let (_, sd) = predict_two_level(&design, &fit.solution, &grid, Target::Group(m - 1)).unwrap();
        prop_assert!(sd.iter().all(|s| *s > 0.0));
        let again = solve_two_level(&build_two_level_blup_blocks(&design, &var).unwrap()).unwrap();
        prop_assert_eq!(again, fit.solution);
    }
}
