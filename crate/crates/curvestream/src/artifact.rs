//! Versioned JSON record of a fitted model.
//!
//! Holds everything needed to predict without the data: the spline bases,
//! group labels, the coefficient means and covariance blocks, plus the
//! hyperparameters and convergence details of the fit. Floats are written
//! in shortest round-trip form, so saving and loading is lossless.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blup::{BlupFitThreeLevel, BlupFitTwoLevel};
use crate::contrast::contrast_curve_on_basis;
use crate::error::{Error, Result};
use crate::mfvb::{HyperparametersThreeLevel, HyperparametersTwoLevel, MfvbFit, QStateThreeLevel, QStateTwoLevel};
use crate::predict::{band_three_level_on_bases, band_two_level_on_bases, Band, Target};
use crate::solvers::{ThreeLevelSolution, TwoLevelSolution};
use crate::splines::SplineBasis;

pub const FORMAT_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoLevelFitRecord {
    Mfvb { hyper: HyperparametersTwoLevel, fit: MfvbFit<QStateTwoLevel> },
    Blup(BlupFitTwoLevel),
}

impl TwoLevelFitRecord {
    pub fn coef(&self) -> &TwoLevelSolution {
        match self {
            Self::Mfvb { fit, .. } => &fit.state.coef,
            Self::Blup(b) => &b.solution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreeLevelFitRecord {
    Mfvb { hyper: HyperparametersThreeLevel, fit: MfvbFit<QStateThreeLevel> },
    Blup(BlupFitThreeLevel),
}

impl ThreeLevelFitRecord {
    pub fn coef(&self) -> &ThreeLevelSolution {
        match self {
            Self::Mfvb { fit, .. } => &fit.state.coef,
            Self::Blup(b) => &b.solution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittedModel {
    TwoLevel {
        labels: Vec<String>,
        basis_gbl: SplineBasis,
        basis_grp: SplineBasis,
        x_range: (f64, f64),
        fit: TwoLevelFitRecord,
    },
    ThreeLevel {
        labels: Vec<String>,
        sub_labels: Vec<Vec<String>>,
        basis_gbl: SplineBasis,
        basis_g: SplineBasis,
        basis_h: SplineBasis,
        x_range: (f64, f64),
        fit: ThreeLevelFitRecord,
    },
    Contrast {
        labels: Vec<String>,
        category_a: String,
        category_b: String,
        basis_gbl: SplineBasis,
        basis_grp: SplineBasis,
        x_range: (f64, f64),
        hyper: HyperparametersTwoLevel,
        fit: MfvbFit<QStateTwoLevel>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub format_version: String,
    pub model: FittedModel,
}

/// A target written as `global`, `group=G` or `subgroup=G/H`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSpec {
    Global,
    Group(String),
    Subgroup(String, String),
}

impl std::str::FromStr for TargetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "global" {
            return Ok(Self::Global);
        }
        if let Some(g) = s.strip_prefix("group=") {
            return Ok(Self::Group(g.to_string()));
        }
        if let Some(rest) = s.strip_prefix("subgroup=") {
            if let Some((g, h)) = rest.split_once('/') {
                return Ok(Self::Subgroup(g.to_string(), h.to_string()));
            }
        }
        Err(Error::InvalidInput(format!("target '{s}' is not global, group=G or subgroup=G/H")))
    }
}

fn find(labels: &[String], label: &str) -> Result<usize> {
    labels.iter().position(|l| l == label).ok_or_else(|| Error::UnknownGroup(label.to_string()))
}

impl FitArtifact {
    pub fn new(model: FittedModel) -> Self {
        Self { format_version: FORMAT_VERSION.to_string(), model }
    }

    pub fn x_range(&self) -> (f64, f64) {
        match &self.model {
            FittedModel::TwoLevel { x_range, .. }
            | FittedModel::ThreeLevel { x_range, .. }
            | FittedModel::Contrast { x_range, .. } => *x_range,
        }
    }

    /// Resolve a labelled target to indices.
    pub fn resolve(&self, spec: &TargetSpec) -> Result<Target> {
        match (&self.model, spec) {
            (_, TargetSpec::Global) => Ok(Target::Global),
            (FittedModel::TwoLevel { labels, .. }, TargetSpec::Group(g))
            | (FittedModel::ThreeLevel { labels, .. }, TargetSpec::Group(g)) => Ok(Target::Group(find(labels, g)?)),
            (FittedModel::ThreeLevel { labels, sub_labels, .. }, TargetSpec::Subgroup(g, h)) => {
                let i = find(labels, g)?;
                let j = sub_labels[i]
                    .iter()
                    .position(|l| l == h)
                    .ok_or_else(|| Error::UnknownGroup(format!("{g}/{h}")))?;
                Ok(Target::Subgroup(i, j))
            }
            (FittedModel::TwoLevel { .. }, TargetSpec::Subgroup(..)) => {
                Err(Error::InvalidInput("two-level fits have no subgroups".into()))
            }
            (FittedModel::Contrast { .. }, _) => {
                Err(Error::InvalidInput("contrast fits only support the global contrast curve".into()))
            }
        }
    }

    /// Curve estimate with band. For contrast fits this is the contrast curve.
    pub fn band(&self, grid: &[f64], target: Target, level: f64) -> Result<Band> {
        match &self.model {
            FittedModel::TwoLevel { basis_gbl, basis_grp, fit, .. } => {
                band_two_level_on_bases(basis_gbl, basis_grp, fit.coef(), grid, target, level)
            }
            FittedModel::ThreeLevel { basis_gbl, basis_g, basis_h, fit, .. } => {
                band_three_level_on_bases([basis_gbl, basis_g, basis_h], fit.coef(), grid, target, level)
            }
            FittedModel::Contrast { basis_gbl, fit, .. } => {
                if target != Target::Global {
                    return Err(Error::InvalidInput("contrast fits only support the global contrast curve".into()));
                }
                contrast_curve_on_basis(basis_gbl, &fit.state.coef, grid, level)
            }
        }
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(r)?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::InvalidInput("artifact has no format_version".into()))?;
        let major = version.split('.').next().unwrap_or_default();
        if major != FORMAT_VERSION.split('.').next().unwrap_or_default() {
            return Err(Error::UnsupportedVersion(version.to_string()));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }
}
