//! Three-level fit: groups containing subgroups, each with its own curve.

use curvestream::prelude::*;
use curvestream::simbench::ThreeLevelSimConfig;

fn main() -> Result<()> {
    let mut cfg = ThreeLevelSimConfig::new(10, 3);
    cfg.n_range = (5, 5);
    cfg.o_range = (128, 128);
    let data = simulate_three_level(&cfg);
    let design = ThreeLevelDesign::new(&data, 15, 8, 6)?;
    let hyper = HyperparametersThreeLevel::default();
    let fit = fit_mfvb_three_level(&design, &hyper, &FitOptions::default())?;
    println!(
        "{} groups, {} subgroups, {} observations: {} cycles, converged = {}",
        design.m(),
        design.n_subgroups(),
        design.n_obs(),
        fit.iterations,
        fit.converged
    );

    let grid = design.default_grid(5);
    let (i, j) = design.subgroup_index("G0002", "S0003")?;
    for (name, target) in [("global", Target::Global), ("G0002", Target::Group(i)), ("G0002/S0003", Target::Subgroup(i, j))] {
        let band = credible_band_three_level(&design, &fit.state.coef, &grid, target, 0.99)?;
        let cells: Vec<String> = band.mean.iter().zip(&band.sd).map(|(m, s)| format!("{m:.3}±{s:.3}")).collect();
        println!("{name:>12}: {}", cells.join("  "));
    }
    Ok(())
}
