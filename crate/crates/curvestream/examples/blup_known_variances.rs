//! Best linear unbiased prediction when the variance parameters are known.
//! Shows how shrinking the group spline variance pulls the group curves
//! toward straight lines.

use curvestream::prelude::*;
use nalgebra::DMatrix;

fn main() -> Result<()> {
    let data = simulate_two_level(&SimConfig::new(30, 4));
    let design = TwoLevelDesign::new(&data, 15, 8)?;
    let grid = design.default_grid(6);

    for sigma_grp_sq in [1.0, 1e-6] {
        let var = VarianceParamsTwoLevel {
            sigma_eps_sq: 0.04,
            sigma_gbl_sq: 1.0,
            sigma_grp_sq,
            sigma: DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.25]),
        };
        let fit = fit_blup_two_level(&design, &var)?;
        let wiggle: f64 = (0..design.m()).map(|i| fit.u_grp(i).norm()).sum::<f64>() / design.m() as f64;
        println!("σ_grp² = {sigma_grp_sq:e}: β̂ = {:?}, mean ‖û_grp,i‖ = {wiggle:.4}", fit.beta().as_slice());
        let (mean, sd) = predict_two_level(&design, &fit.solution, &grid, Target::Group(2))?;
        for k in 0..grid.len() {
            println!("  x = {:.3}: {:.4} ± {:.4}", grid[k], mean[k], sd[k]);
        }
    }
    Ok(())
}
