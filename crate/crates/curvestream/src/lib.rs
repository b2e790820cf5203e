//! Streamlined fitting of two- and three-level group-specific curve models.
//!
//! Each group's mean curve is a global smooth `f` plus a group deviation
//! `g_i` (and a subgroup deviation `h_ij` at three levels), all built from
//! O'Sullivan penalized splines. Fitting runs either as best linear unbiased
//! prediction with known variances ([`blup`]) or as mean field variational
//! Bayes ([`mfvb`]). Both reduce every iteration to a sparse multilevel least
//! squares problem handled by [`solvers`], so the cost grows linearly with
//! the number of groups.
//!
//! ```no_run
//! use curvestream::prelude::*;
//!
//! let data = simulate_two_level(&SimConfig::new(20, 7));
//! let design = TwoLevelDesign::new(&data, 20, 10).unwrap();
//! let hyper = HyperparametersTwoLevel::default_for(&design);
//! let fit = fit_mfvb_two_level(&design, &hyper, &FitOptions::default()).unwrap();
//! let grid = design.default_grid(201);
//! let band = credible_band_two_level(&design, &fit.state.coef, &grid, Target::Global, 0.95).unwrap();
//! println!("{:?}", band.mean);
//! ```

pub mod artifact;
pub mod blup;
pub mod cli;
pub mod contrast;
pub mod data;
pub mod design;
pub mod distributions;
pub mod error;
pub mod linalg;
pub mod mfvb;
pub mod predict;
pub mod simbench;
pub mod solvers;
pub mod splines;

pub use error::{Error, Location, Result};

pub mod prelude {
    pub use crate::blup::{fit_blup_three_level, fit_blup_two_level, VarianceParamsThreeLevel, VarianceParamsTwoLevel};
    pub use crate::contrast::{build_contrast_design, contrast_curve, fit_contrast};
    pub use crate::data::{CategorizedTwoLevelData, ThreeLevelData, TwoLevelData};
    pub use crate::design::{ThreeLevelDesign, TwoLevelDesign};
    pub use crate::error::{Error, Result};
    pub use crate::mfvb::{
        fit_mfvb_three_level, fit_mfvb_two_level, ConvergenceMetric, FitOptions, HyperparametersThreeLevel,
        HyperparametersTwoLevel,
    };
    pub use crate::predict::{
        credible_band_three_level, credible_band_two_level, predict_three_level, predict_two_level, Band, Target,
    };
    pub use crate::simbench::{simulate_three_level, simulate_two_level, SimConfig};
    pub use crate::solvers::{solve_three_level, solve_two_level};
    pub use crate::splines::SplineBasis;
}
