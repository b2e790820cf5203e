//! Save a fit to JSON, load it back and predict without the data.

use curvestream::artifact::{FitArtifact, FittedModel, TargetSpec, TwoLevelFitRecord};
use curvestream::prelude::*;

fn main() -> Result<()> {
    let data = simulate_two_level(&SimConfig::new(12, 5));
    let design = TwoLevelDesign::new(&data, 10, 5)?;
    let hyper = HyperparametersTwoLevel::default_for(&design);
    let fit = fit_mfvb_two_level(&design, &hyper, &FitOptions::default())?;
    let artifact = FitArtifact::new(FittedModel::TwoLevel {
        labels: design.labels.clone(),
        basis_gbl: design.basis_gbl.clone(),
        basis_grp: design.basis_grp.clone(),
        x_range: design.x_range,
        fit: TwoLevelFitRecord::Mfvb { hyper, fit },
    });

    let path = std::env::temp_dir().join("curvestream_example_fit.json");
    artifact.save(&path)?;
    let loaded = FitArtifact::load(&path)?;
    println!("wrote {} ({} bytes), identical after reload: {}", path.display(), std::fs::metadata(&path)?.len(), loaded == artifact);

    let target = loaded.resolve(&"group=G0003".parse::<TargetSpec>()?)?;
    let grid = [0.1, 0.5, 0.9];
    let band = loaded.band(&grid, target, 0.95)?;
    for k in 0..grid.len() {
        println!("G0003 at {}: {:.3} [{:.3}, {:.3}]", grid[k], band.mean[k], band.lower[k], band.upper[k]);
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
