//! Two-level MFVB: one sparse solve per cycle plus closed-form scale updates.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    elbo_two_level, rel_change, rel_change_mat, rel_change_vec, ConvergenceMetric, CovFactor, FitOptions,
    HyperparametersTwoLevel, MfvbFit, ScaleFactor,
};
use crate::design::{two_level_blocks, BetaPrior, TwoLevelDesign, TwoLevelPrecisions};
use crate::distributions::Graph;
use crate::error::{Error, Result};
use crate::linalg::frob_dot;
use crate::solvers::{solve_two_level, TwoLevelGroupSolution, TwoLevelSolution};

/// Expected sufficient statistics of the coefficient q-density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelStats {
    /// `E_q ‖y − Cν‖²`.
    pub rss: f64,
    /// `‖μ_s‖² + tr Σ_s` per global spline segment.
    pub gbl_sq: Vec<f64>,
    /// `Σ_i (μ_lin,i μ_lin,iᵀ + Σ_lin,i)`.
    pub lin_outer: DMatrix<f64>,
    /// `Σ_i (‖μ_grp,i‖² + tr Σ_grp,i)`.
    pub grp_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QStateTwoLevel {
    /// Means and covariance blocks of `q(β, u)`.
    pub coef: TwoLevelSolution,
    pub noise: ScaleFactor,
    pub noise_aux: ScaleFactor,
    /// One factor per global spline segment.
    pub gbl: Vec<ScaleFactor>,
    pub gbl_aux: Vec<ScaleFactor>,
    pub grp: ScaleFactor,
    pub grp_aux: ScaleFactor,
    pub lin: CovFactor,
    pub lin_aux: CovFactor,
    pub stats: TwoLevelStats,
}

/// Starting state: every reciprocal moment and inverse moment equal to one
/// (the identity). The coefficient part is zero until the first cycle.
pub fn init_q_state_two_level(design: &TwoLevelDesign, hyper: &HyperparametersTwoLevel) -> Result<QStateTwoLevel> {
    let (pf, d) = (design.n_fixed, design.n_lin);
    hyper.validate(pf, d)?;
    let m = design.m() as f64;
    let (p, q) = (design.p(), design.q());
    let kr = (q - d) as f64;
    let nd = d as f64;
    let coef = TwoLevelSolution {
        x1: DVector::zeros(p),
        a11: DMatrix::zeros(p, p),
        groups: (0..design.m())
            .map(|_| TwoLevelGroupSolution {
                x2: DVector::zeros(q),
                a22: DMatrix::zeros(q, q),
                a12: DMatrix::zeros(p, q),
            })
            .collect(),
        log_det_a: 0.0,
    };
    Ok(QStateTwoLevel {
        coef,
        noise: ScaleFactor::unit(hyper.nu_eps + design.n_obs() as f64),
        noise_aux: ScaleFactor::unit(hyper.nu_eps + 1.0),
        gbl: design.gbl_segments.iter().map(|&k| ScaleFactor::unit(hyper.nu_gbl + k as f64)).collect(),
        gbl_aux: design.gbl_segments.iter().map(|_| ScaleFactor::unit(hyper.nu_gbl + 1.0)).collect(),
        grp: ScaleFactor::unit(hyper.nu_grp + m * kr),
        grp_aux: ScaleFactor::unit(hyper.nu_grp + 1.0),
        lin: CovFactor::unit(Graph::Full, hyper.nu_sigma + 2.0 * nd - 2.0 + m, d),
        lin_aux: CovFactor::unit(Graph::Diag, hyper.nu_sigma + nd, d),
        stats: TwoLevelStats { rss: 0.0, gbl_sq: vec![0.0; design.gbl_segments.len()], lin_outer: DMatrix::zeros(d, d), grp_sq: 0.0 },
    })
}

impl QStateTwoLevel {
    /// Precisions implied by the current scale moments.
    pub fn precisions(&self, hyper: &HyperparametersTwoLevel) -> Result<TwoLevelPrecisions> {
        Ok(TwoLevelPrecisions {
            noise: self.noise.recip,
            beta: Some(BetaPrior::new(&hyper.mu_beta, &hyper.sigma_beta)?),
            gbl: self.gbl.iter().map(|g| g.recip).collect(),
            lin: self.lin.m.clone(),
            grp: self.grp.recip,
        })
    }

    /// Install a new coefficient q-density and update every scale factor
    /// from its sufficient statistics.
    pub fn apply(&mut self, coef: TwoLevelSolution, stats: TwoLevelStats, hyper: &HyperparametersTwoLevel) -> Result<()> {
        if !coef.log_det_a.is_finite() || !stats.rss.is_finite() {
            return Err(Error::NonFinite("coefficient update".into()));
        }
        self.noise.set_lambda(self.noise_aux.recip + stats.rss, "σ_ε²")?;
        self.lin.set_lambda(&self.lin_aux.m + &stats.lin_outer, "Σ")?;
        self.grp.set_lambda(self.grp_aux.recip + stats.grp_sq, "σ_grp²")?;
        for (g, (aux, sq)) in self.gbl.iter_mut().zip(self.gbl_aux.iter().zip(&stats.gbl_sq)) {
            g.set_lambda(aux.recip + sq, "σ_gbl²")?;
        }

        self.noise_aux.set_lambda(self.noise.recip + 1.0 / (hyper.nu_eps * hyper.s_eps.powi(2)), "a_ε")?;
        let d = self.lin.m.nrows();
        let lam_a = DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                self.lin.m[(i, i)] + 1.0 / (hyper.nu_sigma * hyper.s_sigma[i].powi(2))
            } else {
                0.0
            }
        });
        self.lin_aux.set_lambda(lam_a, "A_Σ")?;
        for (aux, g) in self.gbl_aux.iter_mut().zip(&self.gbl) {
            aux.set_lambda(g.recip + 1.0 / (hyper.nu_gbl * hyper.s_gbl.powi(2)), "a_gbl")?;
        }
        self.grp_aux.set_lambda(self.grp.recip + 1.0 / (hyper.nu_grp * hyper.s_grp.powi(2)), "a_grp")?;

        self.coef = coef;
        self.stats = stats;
        Ok(())
    }

    /// Largest relative change against `prev` over the global coefficients
    /// and all scale parameters.
    pub fn param_change(&self, prev: &Self) -> f64 {
        let mut c = rel_change_vec(&self.coef.x1, &prev.coef.x1);
        let scalars = [
            (&self.noise, &prev.noise),
            (&self.noise_aux, &prev.noise_aux),
            (&self.grp, &prev.grp),
            (&self.grp_aux, &prev.grp_aux),
        ];
        for (a, b) in scalars.into_iter().chain(self.gbl.iter().zip(&prev.gbl)).chain(self.gbl_aux.iter().zip(&prev.gbl_aux)) {
            c = c.max(rel_change(a.lambda, b.lambda));
        }
        c.max(rel_change_mat(&self.lin.lambda, &prev.lin.lambda))
            .max(rel_change_mat(&self.lin_aux.lambda, &prev.lin_aux.lambda))
    }
}

/// Sufficient statistics from the streamlined solution blocks.
pub fn stats_two_level(design: &TwoLevelDesign, coef: &TwoLevelSolution) -> TwoLevelStats {
    let d = design.n_lin;
    let q = design.q();
    let per_group: Vec<(f64, DMatrix<f64>, f64)> = design
        .groups
        .par_iter()
        .zip(coef.groups.par_iter())
        .map(|(g, s)| {
            let resid = &g.y - &g.c_gbl * &coef.x1 - &g.c_grp * &s.x2;
            let gg = g.c_gbl.transpose() * &g.c_gbl;
            let rr = g.c_grp.transpose() * &g.c_grp;
            let gr = g.c_gbl.transpose() * &g.c_grp;
            let rss = resid.norm_squared() + frob_dot(&gg, &coef.a11) + frob_dot(&rr, &s.a22) + 2.0 * frob_dot(&gr, &s.a12);
            let mu_lin = s.x2.rows(0, d);
            let lin = &mu_lin * mu_lin.transpose() + s.a22.view((0, 0), (d, d));
            let mu_grp = s.x2.rows(d, q - d);
            let grp = mu_grp.norm_squared() + s.a22.view((d, d), (q - d, q - d)).trace();
            (rss, lin, grp)
        })
        .collect();
    let mut rss = 0.0;
    let mut lin_outer = DMatrix::zeros(d, d);
    let mut grp_sq = 0.0;
    for (r, l, g) in per_group {
        rss += r;
        lin_outer += l;
        grp_sq += g;
    }
    TwoLevelStats { rss, gbl_sq: segment_sq(design, &coef.x1, &coef.a11), lin_outer, grp_sq }
}

pub(crate) fn segment_sq(design: &TwoLevelDesign, x1: &DVector<f64>, a11: &DMatrix<f64>) -> Vec<f64> {
    let mut c = design.n_fixed;
    design
        .gbl_segments
        .iter()
        .map(|&k| {
            let v = x1.rows(c, k).norm_squared() + a11.view((c, c), (k, k)).trace();
            c += k;
            v
        })
        .collect()
}

/// One full coordinate ascent cycle.
pub fn mfvb_cycle_two_level(
    state: &QStateTwoLevel,
    design: &TwoLevelDesign,
    hyper: &HyperparametersTwoLevel,
) -> Result<QStateTwoLevel> {
    let problem = two_level_blocks(design, &state.precisions(hyper)?)?;
    let coef = solve_two_level(&problem)?;
    let stats = stats_two_level(design, &coef);
    let mut next = state.clone();
    next.apply(coef, stats, hyper)?;
    Ok(next)
}

/// Drive `cycle` until the stopping rule fires. Shared with the dense
/// baseline.
pub(crate) fn iterate_two_level<F>(
    design: &TwoLevelDesign,
    hyper: &HyperparametersTwoLevel,
    opts: &FitOptions,
    mut cycle: F,
) -> Result<MfvbFit<QStateTwoLevel>>
where
    F: FnMut(&QStateTwoLevel) -> Result<QStateTwoLevel>,
{
    opts.validate()?;
    let start = Instant::now();
    let metric = opts.convergence_metric.unwrap_or(ConvergenceMetric::Elbo);
    let limit = opts.fixed_iterations.unwrap_or(opts.max_iterations);
    let mut state = init_q_state_two_level(design, hyper)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=limit {
        let next = cycle(&state)?;
        let elbo = elbo_two_level(&next, design, hyper)?;
        let change = match metric {
            ConvergenceMetric::Elbo => trace.last().map(|&prev: &f64| (elbo - prev) / prev.abs().max(1e-300)),
            ConvergenceMetric::ParamChange => (t > 1).then(|| next.param_change(&state)),
        };
        trace.push(elbo);
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
    Ok(MfvbFit { state, iterations, converged, elbo_trace: trace, wall_time_s: start.elapsed().as_secs_f64() })
}

/// Fit the two-level model.
pub fn fit_mfvb_two_level(
    design: &TwoLevelDesign,
    hyper: &HyperparametersTwoLevel,
    opts: &FitOptions,
) -> Result<MfvbFit<QStateTwoLevel>> {
    iterate_two_level(design, hyper, opts, |s| mfvb_cycle_two_level(s, design, hyper))
}
