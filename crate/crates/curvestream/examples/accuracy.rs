//! The L1 accuracy score between two densities on a shared grid.

use curvestream::design::linspace;
use curvestream::simbench::accuracy::{accuracy, GriddedDensity};
use statrs::distribution::{Continuous, Normal};

fn main() -> curvestream::Result<()> {
    let grid = linspace(-8.0, 8.5, 4001);
    let p = Normal::new(0.0, 1.0).unwrap();
    let reference = GriddedDensity::from_fn(&grid, |x| p.pdf(x));
    for (mu, sd) in [(0.0, 1.0), (0.1, 1.0), (0.5, 1.0), (0.0, 1.2), (2.0, 0.5)] {
        let q = Normal::new(mu, sd).unwrap();
        let approx = GriddedDensity::from_fn(&grid, |x| q.pdf(x));
        println!("N({mu}, {sd}²) against N(0, 1): {:.2}%", accuracy(&approx, &reference)?);
    }
    Ok(())
}
