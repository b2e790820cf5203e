use std::fmt;

/// Where in a multilevel problem a numerical failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    /// Factorization of a group block (0-based group index).
    Group(usize),
    /// Factorization of a subgroup block (0-based group and subgroup indices).
    Subgroup(usize, usize),
    /// The per-group reduction step of the three-level solver.
    GroupReduction(usize),
    /// The final reduction over all groups.
    Reduction,
    /// A standalone matrix with no group context.
    Standalone,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Group(i) => write!(f, "group {i}"),
            Location::Subgroup(i, j) => write!(f, "group {i}, subgroup {j}"),
            Location::GroupReduction(i) => write!(f, "reduction within group {i}"),
            Location::Reduction => write!(f, "final reduction"),
            Location::Standalone => write!(f, "standalone matrix"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rank deficient factorization at {at}: |R_kk| = {value:e} <= tolerance {tol:e}")]
    RankDeficient { at: Location, value: f64, tol: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("matrix is not positive definite: {0}")]
    NonPositiveDefinite(String),

    #[error("need at least {needed} distinct x values, found {found}")]
    TooFewDistinctValues { needed: usize, found: usize },

    #[error("x = {x} lies outside the spline boundary [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },

    #[error("unknown group: {0}")]
    UnknownGroup(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("contrast needs both categories, only '{0}' present")]
    SingleCategory(String),

    #[error("dense dimension {dim} exceeds the naive cap {cap}")]
    DimensionCapExceeded { dim: usize, cap: usize },

    #[error("density grids differ: {0}")]
    GridMismatch(String),

    #[error("density does not integrate to 1 (trapezoid integral {0})")]
    NotNormalized(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported artifact version {0}")]
    UnsupportedVersion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::Singular(_)
                | Error::NonPositiveDefinite(_)
                | Error::NonFinite(_)
                | Error::DimensionCapExceeded { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
