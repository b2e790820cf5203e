//! Three-level MFVB. Convergence is tracked by parameter change.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    rel_change, rel_change_mat, rel_change_vec, ConvergenceMetric, CovFactor, FitOptions, HyperparametersThreeLevel,
    MfvbFit, ScaleFactor,
};
use crate::design::{three_level_blocks, BetaPrior, ThreeLevelDesign, ThreeLevelPrecisions};
use crate::distributions::Graph;
use crate::error::{Error, Result};
use crate::linalg::frob_dot;
use crate::solvers::{
    solve_three_level, ThreeLevelGroupSolution, ThreeLevelSolution, ThreeLevelSubgroupSolution,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelStats {
    pub rss: f64,
    pub gbl_sq: f64,
    pub g_outer: DMatrix<f64>,
    pub g_sq: f64,
    pub h_outer: DMatrix<f64>,
    pub h_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QStateThreeLevel {
    pub coef: ThreeLevelSolution,
    pub noise: ScaleFactor,
    pub noise_aux: ScaleFactor,
    pub gbl: ScaleFactor,
    pub gbl_aux: ScaleFactor,
    pub grp_g: ScaleFactor,
    pub grp_g_aux: ScaleFactor,
    pub grp_h: ScaleFactor,
    pub grp_h_aux: ScaleFactor,
    pub lin_g: CovFactor,
    pub lin_g_aux: CovFactor,
    pub lin_h: CovFactor,
    pub lin_h_aux: CovFactor,
    pub stats: ThreeLevelStats,
}

pub fn init_q_state_three_level(
    design: &ThreeLevelDesign,
    hyper: &HyperparametersThreeLevel,
) -> Result<QStateThreeLevel> {
    hyper.validate()?;
    let (p, q1, q2) = (design.p(), design.q1(), design.q2());
    let m = design.m() as f64;
    let nsub = design.n_subgroups() as f64;
    let coef = ThreeLevelSolution {
        x1: DVector::zeros(p),
        a11: DMatrix::zeros(p, p),
        groups: design
            .groups
            .iter()
            .map(|g| ThreeLevelGroupSolution {
                x2: DVector::zeros(q1),
                a22: DMatrix::zeros(q1, q1),
                a12: DMatrix::zeros(p, q1),
                subgroups: g
                    .iter()
                    .map(|_| ThreeLevelSubgroupSolution {
                        x2: DVector::zeros(q2),
                        a22: DMatrix::zeros(q2, q2),
                        a12: DMatrix::zeros(p, q2),
                        a12_cross: DMatrix::zeros(q1, q2),
                    })
                    .collect(),
            })
            .collect(),
        log_det_a: 0.0,
    };
    Ok(QStateThreeLevel {
        coef,
        noise: ScaleFactor::unit(hyper.nu_eps + design.n_obs() as f64),
        noise_aux: ScaleFactor::unit(hyper.nu_eps + 1.0),
        gbl: ScaleFactor::unit(hyper.nu_gbl + (p - 2) as f64),
        gbl_aux: ScaleFactor::unit(hyper.nu_gbl + 1.0),
        grp_g: ScaleFactor::unit(hyper.nu_grp_g + m * (q1 - 2) as f64),
        grp_g_aux: ScaleFactor::unit(hyper.nu_grp_g + 1.0),
        grp_h: ScaleFactor::unit(hyper.nu_grp_h + nsub * (q2 - 2) as f64),
        grp_h_aux: ScaleFactor::unit(hyper.nu_grp_h + 1.0),
        lin_g: CovFactor::unit(Graph::Full, hyper.nu_sigma_g + 2.0 + m, 2),
        lin_g_aux: CovFactor::unit(Graph::Diag, hyper.nu_sigma_g + 2.0, 2),
        lin_h: CovFactor::unit(Graph::Full, hyper.nu_sigma_h + 2.0 + nsub, 2),
        lin_h_aux: CovFactor::unit(Graph::Diag, hyper.nu_sigma_h + 2.0, 2),
        stats: ThreeLevelStats {
            rss: 0.0,
            gbl_sq: 0.0,
            g_outer: DMatrix::zeros(2, 2),
            g_sq: 0.0,
            h_outer: DMatrix::zeros(2, 2),
            h_sq: 0.0,
        },
    })
}

fn diag_aux(m: &DMatrix<f64>, nu: f64, s: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| if i == j { m[(i, i)] + 1.0 / (nu * s[i].powi(2)) } else { 0.0 })
}

impl QStateThreeLevel {
    pub fn precisions(&self, hyper: &HyperparametersThreeLevel) -> Result<ThreeLevelPrecisions> {
        Ok(ThreeLevelPrecisions {
            noise: self.noise.recip,
            beta: Some(BetaPrior::new(&hyper.mu_beta, &hyper.sigma_beta)?),
            gbl: self.gbl.recip,
            lin_g: self.lin_g.m.clone(),
            grp_g: self.grp_g.recip,
            lin_h: self.lin_h.m.clone(),
            grp_h: self.grp_h.recip,
        })
    }

    pub fn apply(
        &mut self,
        coef: ThreeLevelSolution,
        stats: ThreeLevelStats,
        hyper: &HyperparametersThreeLevel,
    ) -> Result<()> {
        if !coef.log_det_a.is_finite() || !stats.rss.is_finite() {
            return Err(Error::NonFinite("coefficient update".into()));
        }
        self.noise.set_lambda(self.noise_aux.recip + stats.rss, "σ_ε²")?;
        self.gbl.set_lambda(self.gbl_aux.recip + stats.gbl_sq, "σ_gbl²")?;
        self.lin_g.set_lambda(&self.lin_g_aux.m + &stats.g_outer, "Σ_g")?;
        self.grp_g.set_lambda(self.grp_g_aux.recip + stats.g_sq, "σ_grp,g²")?;
        self.lin_h.set_lambda(&self.lin_h_aux.m + &stats.h_outer, "Σ_h")?;
        self.grp_h.set_lambda(self.grp_h_aux.recip + stats.h_sq, "σ_grp,h²")?;

        let inv = |nu: f64, s: f64| 1.0 / (nu * s * s);
        self.noise_aux.set_lambda(self.noise.recip + inv(hyper.nu_eps, hyper.s_eps), "a_ε")?;
        self.gbl_aux.set_lambda(self.gbl.recip + inv(hyper.nu_gbl, hyper.s_gbl), "a_gbl")?;
        self.grp_g_aux.set_lambda(self.grp_g.recip + inv(hyper.nu_grp_g, hyper.s_grp_g), "a_grp,g")?;
        self.grp_h_aux.set_lambda(self.grp_h.recip + inv(hyper.nu_grp_h, hyper.s_grp_h), "a_grp,h")?;
        self.lin_g_aux.set_lambda(diag_aux(&self.lin_g.m, hyper.nu_sigma_g, &hyper.s_sigma_g), "A_Σg")?;
        self.lin_h_aux.set_lambda(diag_aux(&self.lin_h.m, hyper.nu_sigma_h, &hyper.s_sigma_h), "A_Σh")?;

        self.coef = coef;
        self.stats = stats;
        Ok(())
    }

    /// Largest of the relative changes in `μ_q(β, u_gbl)`, every scalar
    /// `λ` and the Frobenius-relative changes of `Λ_q(Σ_g)`, `Λ_q(Σ_h)`.
    pub fn param_change(&self, prev: &Self) -> f64 {
        let pairs = [
            (&self.noise, &prev.noise),
            (&self.noise_aux, &prev.noise_aux),
            (&self.gbl, &prev.gbl),
            (&self.gbl_aux, &prev.gbl_aux),
            (&self.grp_g, &prev.grp_g),
            (&self.grp_g_aux, &prev.grp_g_aux),
            (&self.grp_h, &prev.grp_h),
            (&self.grp_h_aux, &prev.grp_h_aux),
        ];
        pairs
            .iter()
            .map(|(a, b)| rel_change(a.lambda, b.lambda))
            .fold(rel_change_vec(&self.coef.x1, &prev.coef.x1), f64::max)
            .max(rel_change_mat(&self.lin_g.lambda, &prev.lin_g.lambda))
            .max(rel_change_mat(&self.lin_h.lambda, &prev.lin_h.lambda))
    }
}

/// Sufficient statistics from the streamlined three-level blocks.
pub fn stats_three_level(design: &ThreeLevelDesign, coef: &ThreeLevelSolution) -> ThreeLevelStats {
    let (q1, q2) = (design.q1(), design.q2());
    let p = design.p();
    let per_group: Vec<ThreeLevelStats> = design
        .groups
        .par_iter()
        .zip(coef.groups.par_iter())
        .map(|(gd, gs)| {
            let mut rss = 0.0;
            let mut h_outer = DMatrix::zeros(2, 2);
            let mut h_sq = 0.0;
            for (sd, ss) in gd.iter().zip(&gs.subgroups) {
                let resid = &sd.y - &sd.c_gbl * &coef.x1 - &sd.c_g * &gs.x2 - &sd.c_h * &ss.x2;
                let cg_t = sd.c_gbl.transpose();
                let c1_t = sd.c_g.transpose();
                rss += resid.norm_squared()
                    + frob_dot(&(&cg_t * &sd.c_gbl), &coef.a11)
                    + frob_dot(&(&c1_t * &sd.c_g), &gs.a22)
                    + frob_dot(&(sd.c_h.transpose() * &sd.c_h), &ss.a22)
                    + 2.0 * frob_dot(&(&cg_t * &sd.c_g), &gs.a12)
                    + 2.0 * frob_dot(&(&cg_t * &sd.c_h), &ss.a12)
                    + 2.0 * frob_dot(&(&c1_t * &sd.c_h), &ss.a12_cross);
                let mu = ss.x2.rows(0, 2);
                h_outer += &mu * mu.transpose() + ss.a22.view((0, 0), (2, 2));
                h_sq += ss.x2.rows(2, q2 - 2).norm_squared() + ss.a22.view((2, 2), (q2 - 2, q2 - 2)).trace();
            }
            let mu = gs.x2.rows(0, 2);
            ThreeLevelStats {
                rss,
                gbl_sq: 0.0,
                g_outer: &mu * mu.transpose() + gs.a22.view((0, 0), (2, 2)),
                g_sq: gs.x2.rows(2, q1 - 2).norm_squared() + gs.a22.view((2, 2), (q1 - 2, q1 - 2)).trace(),
                h_outer,
                h_sq,
            }
        })
        .collect();
    let mut total = ThreeLevelStats {
        rss: 0.0,
        gbl_sq: coef.x1.rows(2, p - 2).norm_squared() + coef.a11.view((2, 2), (p - 2, p - 2)).trace(),
        g_outer: DMatrix::zeros(2, 2),
        g_sq: 0.0,
        h_outer: DMatrix::zeros(2, 2),
        h_sq: 0.0,
    };
    for s in per_group {
        total.rss += s.rss;
        total.g_outer += s.g_outer;
        total.g_sq += s.g_sq;
        total.h_outer += s.h_outer;
        total.h_sq += s.h_sq;
    }
    total
}

pub fn mfvb_cycle_three_level(
    state: &QStateThreeLevel,
    design: &ThreeLevelDesign,
    hyper: &HyperparametersThreeLevel,
) -> Result<QStateThreeLevel> {
    let problem = three_level_blocks(design, &state.precisions(hyper)?)?;
    let coef = solve_three_level(&problem)?;
    let stats = stats_three_level(design, &coef);
    let mut next = state.clone();
    next.apply(coef, stats, hyper)?;
    Ok(next)
}

pub(crate) fn iterate_three_level<F>(
    design: &ThreeLevelDesign,
    hyper: &HyperparametersThreeLevel,
    opts: &FitOptions,
    mut cycle: F,
) -> Result<MfvbFit<QStateThreeLevel>>
where
    F: FnMut(&QStateThreeLevel) -> Result<QStateThreeLevel>,
{
    opts.validate()?;
    if opts.convergence_metric == Some(ConvergenceMetric::Elbo) {
        return Err(Error::InvalidInput(
            "the three-level fit has no lower bound implementation; use parameter change".into(),
        ));
    }
    let start = Instant::now();
    let limit = opts.fixed_iterations.unwrap_or(opts.max_iterations);
    let mut state = init_q_state_three_level(design, hyper)?;
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=limit {
        let next = cycle(&state)?;
        let change = (t > 1).then(|| next.param_change(&state));
        state = next;
        iterations = t;
        converged = change.is_some_and(|c| c < opts.rel_tol);
        if converged && opts.fixed_iterations.is_none() {
            break;
        }
    }
    if !converged && opts.fixed_iterations.is_none() {
        log::warn!("MFVB stopped after {iterations} cycles without meeting the tolerance {}", opts.rel_tol);
    }
    Ok(MfvbFit { state, iterations, converged, elbo_trace: Vec::new(), wall_time_s: start.elapsed().as_secs_f64() })
}

pub fn fit_mfvb_three_level(
    design: &ThreeLevelDesign,
    hyper: &HyperparametersThreeLevel,
    opts: &FitOptions,
) -> Result<MfvbFit<QStateThreeLevel>> {
    iterate_three_level(design, hyper, opts, |s| mfvb_cycle_three_level(s, design, hyper))
}
