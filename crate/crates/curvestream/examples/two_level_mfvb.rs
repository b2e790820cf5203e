//! Variational Bayes fit of simulated group-specific curves.
//!
//! cargo run --example two_level_mfvb -- [m] [seed]

use curvestream::prelude::*;
use curvestream::simbench::f_true;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let m: usize = args.next().map_or(50, |s| s.parse().expect("m must be an integer"));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed must be an integer"));

    let data = simulate_two_level(&SimConfig::new(m, seed));
    let design = TwoLevelDesign::new(&data, 20, 10)?;
    let hyper = HyperparametersTwoLevel::default_for(&design);
    let fit = fit_mfvb_two_level(&design, &hyper, &FitOptions::default())?;
    println!(
        "m = {m}, n = {}, {} cycles, converged = {}, {:.3} s",
        design.n_obs(),
        fit.iterations,
        fit.converged,
        fit.wall_time_s
    );
    println!("final lower bound {:.4}", fit.elbo_trace.last().copied().unwrap_or(f64::NAN));
    println!("posterior mean of noise variance {:.5}", fit.state.noise.lambda / (fit.state.noise.xi - 2.0));

    let grid = design.default_grid(11);
    let global = credible_band_two_level(&design, &fit.state.coef, &grid, Target::Global, 0.95)?;
    let first = credible_band_two_level(&design, &fit.state.coef, &grid, Target::Group(0), 0.95)?;
    println!("\n     x    f(x)   f-hat   lower   upper  {}-hat", design.labels[0]);
    for k in 0..grid.len() {
        println!(
            "{:6.3} {:7.3} {:7.3} {:7.3} {:7.3} {:7.3}",
            grid[k],
            f_true(grid[k]),
            global.mean[k],
            global.lower[k],
            global.upper[k],
            first.mean[k]
        );
    }
    Ok(())
}
