//! Difference between the mean curves of two categories of groups.

use curvestream::prelude::*;
use curvestream::simbench::simulate_categorized;

fn main() -> Result<()> {
    let true_gap = |x: f64| 0.3 * (std::f64::consts::PI * x).sin();
    let data = simulate_categorized(&SimConfig::new(60, 11), true_gap);
    let fit = fit_contrast(&data, 15, 8, None, &FitOptions::default())?;
    println!(
        "categories {} vs {}: {} cycles, converged = {}",
        fit.category_b, fit.category_a, fit.fit.iterations, fit.fit.converged
    );
    let grid = fit.design.default_grid(9);
    let band = contrast_curve(&fit.design, &fit.fit.state.coef, &grid, 0.95)?;
    println!("     x   truth     est   lower   upper");
    for k in 0..grid.len() {
        println!(
            "{:6.3} {:7.3} {:7.3} {:7.3} {:7.3}",
            grid[k],
            true_gap(grid[k]),
            band.mean[k],
            band.lower[k],
            band.upper[k]
        );
    }
    Ok(())
}
