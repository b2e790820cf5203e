//! Lower bound on the marginal log-likelihood for the two-level model.
//!
//! Written in the compact form that follows once the `E log σ²` and
//! `E log |Σ|` terms of the prior and the q-density cancel, which happens
//! for every admissible shape `ξ` (not only at the optimum). The bound is
//! therefore valid after any partial update.

use statrs::function::gamma::ln_gamma;

use super::{HyperparametersTwoLevel, QStateTwoLevel, ScaleFactor};
use crate::design::TwoLevelDesign;
use crate::error::{Error, Result};
use crate::linalg::{frob_dot, spd_inverse_logdet};

/// `log Γ_d(a)`.
pub fn log_multigamma(d: usize, a: f64) -> f64 {
    let d_f = d as f64;
    0.25 * d_f * (d_f - 1.0) * std::f64::consts::PI.ln() + (0..d).map(|j| ln_gamma(a - 0.5 * j as f64)).sum::<f64>()
}

/// Contribution of a `σ² | a`, `a` pair with prior shape `nu` and scale `s`.
fn scale_pair(nu: f64, s: f64, sig: &ScaleFactor, aux: &ScaleFactor) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    let lam_a = 1.0 / (nu * s * s);
    -0.5 * nu * ln2 - ln_gamma(0.5 * nu) - 0.5 * aux.recip * sig.recip + 0.5 * (0.5 * lam_a).ln()
        - ln_gamma(0.5)
        - 0.5 * lam_a * aux.recip
        - 0.5 * sig.xi * (0.5 * sig.lambda).ln()
        + ln_gamma(0.5 * sig.xi)
        + 0.5 * sig.lambda * sig.recip
        - 0.5 * aux.xi * (0.5 * aux.lambda).ln()
        + ln_gamma(0.5 * aux.xi)
        + 0.5 * aux.lambda * aux.recip
}

pub fn elbo_two_level(state: &QStateTwoLevel, design: &TwoLevelDesign, hyper: &HyperparametersTwoLevel) -> Result<f64> {
    let ln2 = std::f64::consts::LN_2;
    let n = design.n_obs() as f64;
    let pf = design.n_fixed;
    let dim = (design.p() + design.m() * design.q()) as f64;
    let st = &state.stats;

    let mut e = -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * state.noise.recip * st.rss;

    let (sb_inv, sb_logdet) = spd_inverse_logdet(&hyper.sigma_beta, "Σ_β")?;
    let delta = &hyper.mu_beta - state.coef.x1.rows(0, pf);
    let second = &delta * delta.transpose() + state.coef.a11.view((0, 0), (pf, pf));
    e += -0.5 * sb_logdet - 0.5 * frob_dot(&sb_inv, &second);

    for (g, sq) in state.gbl.iter().zip(&st.gbl_sq) {
        e -= 0.5 * g.recip * sq;
    }
    e -= 0.5 * frob_dot(&state.lin.m, &st.lin_outer);
    e -= 0.5 * state.grp.recip * st.grp_sq;
    e += 0.5 * dim - 0.5 * state.coef.log_det_a;

    e += scale_pair(hyper.nu_eps, hyper.s_eps, &state.noise, &state.noise_aux);
    for (g, a) in state.gbl.iter().zip(&state.gbl_aux) {
        e += scale_pair(hyper.nu_gbl, hyper.s_gbl, g, a);
    }
    e += scale_pair(hyper.nu_grp, hyper.s_grp, &state.grp, &state.grp_aux);

    let d = design.n_lin;
    let d_f = d as f64;
    let kappa0 = hyper.nu_sigma + d_f - 1.0;
    let kappa = kappa0 + design.m() as f64;
    let lam_q = &state.lin.lambda;
    let log_det_lam = lam_q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonPositiveDefinite("Λ of q(Σ)".into()))?
        .l()
        .diagonal()
        .iter()
        .map(|v| 2.0 * v.ln())
        .sum::<f64>();
    e += -0.5 * kappa0 * d_f * ln2 - log_multigamma(d, 0.5 * kappa0) - 0.5 * frob_dot(&state.lin_aux.m, &state.lin.m)
        - 0.5 * kappa * log_det_lam
        + 0.5 * kappa * d_f * ln2
        + log_multigamma(d, 0.5 * kappa)
        + 0.5 * frob_dot(lam_q, &state.lin.m);

    let xi_a = state.lin_aux.xi;
    for j in 0..d {
        let lam_prior = 1.0 / (hyper.nu_sigma * hyper.s_sigma[j].powi(2));
        let lam = state.lin_aux.lambda[(j, j)];
        let mj = state.lin_aux.m[(j, j)];
        e += 0.5 * (0.5 * lam_prior).ln() - ln_gamma(0.5) - 0.5 * lam_prior * mj - 0.5 * xi_a * (0.5 * lam).ln()
            + ln_gamma(0.5 * xi_a)
            + 0.5 * lam * mj;
    }
    if e.is_finite() {
        Ok(e)
    } else {
        Err(Error::NonFinite("lower bound".into()))
    }
}
