//! Command-line front end. The binary is a thin wrapper around [`cli_main`].

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::artifact::{FitArtifact, FittedModel, TargetSpec, ThreeLevelFitRecord, TwoLevelFitRecord};
use crate::blup::{fit_blup_three_level, fit_blup_two_level, VarianceParamsThreeLevel, VarianceParamsTwoLevel};
use crate::contrast::fit_contrast;
use crate::data::{read_categorized, read_three_level, read_two_level, write_categorized, write_three_level, write_two_level};
use crate::design::{linspace, ThreeLevelDesign, TwoLevelDesign, DEFAULT_K_GBL, DEFAULT_K_GRP};
use crate::error::{Error, Result};
use crate::mfvb::{
    fit_mfvb_three_level, fit_mfvb_two_level, FitOptions, HyperparametersThreeLevel, HyperparametersTwoLevel,
};
use crate::predict::Band;
use crate::simbench::bench::records_to_csv;
use crate::simbench::{
    run_benchmark, simulate_categorized, simulate_three_level, simulate_two_level, BenchConfig, SimConfig,
    ThreeLevelSimConfig,
};

#[derive(Debug, Parser)]
#[command(name = "curvestream", version, about = "Fit group-specific curve models in time linear in the number of groups")]
pub struct Cli {
    /// Only log errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Write log lines as JSON objects.
    #[arg(long, global = true)]
    pub json_logs: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Mfvb,
    Blup,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Mfvb)]
    pub method: Method,
    /// Number of global spline columns.
    #[arg(long, default_value_t = DEFAULT_K_GBL)]
    pub kgbl: usize,
    /// Number of group spline columns.
    #[arg(long, default_value_t = DEFAULT_K_GRP)]
    pub kgrp: usize,
    /// JSON file overriding prior hyperparameters (MFVB).
    #[arg(long)]
    pub hyper: Option<PathBuf>,
    /// JSON file with known variance parameters (BLUP).
    #[arg(long)]
    pub variances: Option<PathBuf>,
    /// Relative tolerance of the stopping rule.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Output artifact.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a two-level model to `group,x,y` data.
    Fit2(FitArgs),
    /// Fit a three-level model to `group,subgroup,x,y` data.
    Fit3 {
        #[command(flatten)]
        fit: FitArgs,
        /// Number of subgroup spline columns.
        #[arg(long, default_value_t = DEFAULT_K_GRP)]
        kgrp_h: usize,
    },
    /// Evaluate a fitted curve with a pointwise band.
    Predict {
        #[arg(long)]
        fit: PathBuf,
        /// Number of equispaced points over the training range, or a
        /// comma-separated list of x values.
        #[arg(long, default_value = "201")]
        grid: String,
        /// `global`, `group=G` or `subgroup=G/H`.
        #[arg(long, default_value = "global")]
        target: String,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Output CSV (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the two-category contrast model to `group,x,y,category` data.
    ContrastFit {
        #[arg(long)]
        data: PathBuf,
        /// Label treated as category A (default: smallest label).
        #[arg(long)]
        category_a: Option<String>,
        #[arg(long, default_value_t = DEFAULT_K_GBL)]
        kgbl: usize,
        #[arg(long, default_value_t = DEFAULT_K_GRP)]
        kgrp: usize,
        #[arg(long)]
        hyper: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the B-minus-A contrast curve of a contrast fit.
    ContrastCurve {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long, default_value = "201")]
        grid: String,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate two-level data.
    Simulate2 {
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Add a `category` column (half the groups each).
        #[arg(long)]
        with_category: bool,
        /// Constant added to category B means.
        #[arg(long, default_value_t = 0.0)]
        contrast_shift: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate three-level data.
    Simulate3 {
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time streamlined against dense MFVB.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "50,100,200,400")]
        ms: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 50)]
        fixed_iters: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Largest coefficient count the dense variant accepts.
        #[arg(long, default_value_t = crate::simbench::DEFAULT_DIMENSION_CAP)]
        cap: usize,
        /// Output CSV (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// Optional overrides of the diffuse prior defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverrides {
    /// Common prior variance of every fixed effect.
    pub beta_variance: Option<f64>,
    pub nu_eps: Option<f64>,
    pub s_eps: Option<f64>,
    pub nu_gbl: Option<f64>,
    pub s_gbl: Option<f64>,
    pub nu_grp: Option<f64>,
    pub s_grp: Option<f64>,
    pub nu_grp_h: Option<f64>,
    pub s_grp_h: Option<f64>,
    pub nu_sigma: Option<f64>,
    pub s_sigma: Option<f64>,
    pub nu_sigma_h: Option<f64>,
    pub s_sigma_h: Option<f64>,
}

impl HyperOverrides {
    fn apply_two_level(&self, h: &mut HyperparametersTwoLevel) {
        if let Some(v) = self.beta_variance {
            let n = h.mu_beta.len();
            h.sigma_beta = DMatrix::identity(n, n) * v;
        }
        set(&mut h.nu_eps, self.nu_eps);
        set(&mut h.s_eps, self.s_eps);
        set(&mut h.nu_gbl, self.nu_gbl);
        set(&mut h.s_gbl, self.s_gbl);
        set(&mut h.nu_grp, self.nu_grp);
        set(&mut h.s_grp, self.s_grp);
        set(&mut h.nu_sigma, self.nu_sigma);
        if let Some(s) = self.s_sigma {
            h.s_sigma.iter_mut().for_each(|v| *v = s);
        }
    }

    fn apply_three_level(&self, h: &mut HyperparametersThreeLevel) {
        if let Some(v) = self.beta_variance {
            h.sigma_beta = DMatrix::identity(2, 2) * v;
        }
        set(&mut h.nu_eps, self.nu_eps);
        set(&mut h.s_eps, self.s_eps);
        set(&mut h.nu_gbl, self.nu_gbl);
        set(&mut h.s_gbl, self.s_gbl);
        set(&mut h.nu_grp_g, self.nu_grp);
        set(&mut h.s_grp_g, self.s_grp);
        set(&mut h.nu_grp_h, self.nu_grp_h);
        set(&mut h.s_grp_h, self.s_grp_h);
        set(&mut h.nu_sigma_g, self.nu_sigma);
        set(&mut h.nu_sigma_h, self.nu_sigma_h);
        if let Some(s) = self.s_sigma {
            h.s_sigma_g = vec![s; 2];
        }
        if let Some(s) = self.s_sigma_h {
            h.s_sigma_h = vec![s; 2];
        }
    }
}

fn set(slot: &mut f64, v: Option<f64>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Known variances for BLUP. Covariance matrices are given row by row.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceFile {
    pub sigma_eps_sq: f64,
    pub sigma_gbl_sq: f64,
    pub sigma_grp_sq: Option<f64>,
    pub sigma: Option<[[f64; 2]; 2]>,
    pub sigma_grp_g_sq: Option<f64>,
    pub sigma_grp_h_sq: Option<f64>,
    pub sigma_g: Option<[[f64; 2]; 2]>,
    pub sigma_h: Option<[[f64; 2]; 2]>,
}

fn mat2(m: [[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]])
}

fn need<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidInput(format!("variance file lacks '{name}'")))
}

impl VarianceFile {
    fn two_level(&self) -> Result<VarianceParamsTwoLevel> {
        Ok(VarianceParamsTwoLevel {
            sigma_eps_sq: self.sigma_eps_sq,
            sigma_gbl_sq: self.sigma_gbl_sq,
            sigma_grp_sq: need(self.sigma_grp_sq, "sigma_grp_sq")?,
            sigma: mat2(need(self.sigma, "sigma")?),
        })
    }

    fn three_level(&self) -> Result<VarianceParamsThreeLevel> {
        Ok(VarianceParamsThreeLevel {
            sigma_eps_sq: self.sigma_eps_sq,
            sigma_gbl_sq: self.sigma_gbl_sq,
            sigma_grp_g_sq: need(self.sigma_grp_g_sq, "sigma_grp_g_sq")?,
            sigma_grp_h_sq: need(self.sigma_grp_h_sq, "sigma_grp_h_sq")?,
            sigma_g: mat2(need(self.sigma_g, "sigma_g")?),
            sigma_h: mat2(need(self.sigma_h, "sigma_h")?),
        })
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))
}

fn fit_options(tol: f64, max_iter: usize) -> FitOptions {
    FitOptions { rel_tol: tol, max_iterations: max_iter, ..FitOptions::default() }
}

fn hyper_overrides(path: &Option<PathBuf>) -> Result<HyperOverrides> {
    path.as_deref().map(read_json).transpose().map(Option::unwrap_or_default)
}

fn parse_grid(spec: &str, range: (f64, f64)) -> Result<Vec<f64>> {
    if let Ok(n) = spec.trim().parse::<usize>() {
        if n == 0 {
            return Err(Error::InvalidInput("grid needs at least one point".into()));
        }
        return Ok(linspace(range.0, range.1, n));
    }
    spec.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("grid value '{t}' is not a number")))
        })
        .collect()
}

fn write_band(band: &Band, out: Option<&Path>) -> Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["x", "mean", "sd", "lower", "upper"])?;
    for k in 0..band.x.len() {
        w.write_record(
            [band.x[k], band.mean[k], band.sd[k], band.lower[k], band.upper[k]].iter().map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

fn fit2(a: &FitArgs) -> Result<()> {
    let data = read_two_level(open(&a.data)?)?;
    let design = TwoLevelDesign::new(&data, a.kgbl, a.kgrp)?;
    let fit = match a.method {
        Method::Mfvb => {
            let mut hyper = HyperparametersTwoLevel::default_for(&design);
            hyper_overrides(&a.hyper)?.apply_two_level(&mut hyper);
            let fit = fit_mfvb_two_level(&design, &hyper, &fit_options(a.tol, a.max_iter))?;
            log::info!("MFVB finished after {} cycles (converged: {})", fit.iterations, fit.converged);
            TwoLevelFitRecord::Mfvb { hyper, fit }
        }
        Method::Blup => {
            let path = a
                .variances
                .as_deref()
                .ok_or_else(|| Error::InvalidInput("BLUP needs --variances".into()))?;
            let v: VarianceFile = read_json(path)?;
            TwoLevelFitRecord::Blup(fit_blup_two_level(&design, &v.two_level()?)?)
        }
    };
    FitArtifact::new(FittedModel::TwoLevel {
        labels: design.labels.clone(),
        x_range: design.x_range,
        basis_gbl: design.basis_gbl,
        basis_grp: design.basis_grp,
        fit,
    })
    .save(&a.out)
}

fn fit3(a: &FitArgs, kgrp_h: usize) -> Result<()> {
    let data = read_three_level(open(&a.data)?)?;
    let design = ThreeLevelDesign::new(&data, a.kgbl, a.kgrp, kgrp_h)?;
    let fit = match a.method {
        Method::Mfvb => {
            let mut hyper = HyperparametersThreeLevel::default();
            hyper_overrides(&a.hyper)?.apply_three_level(&mut hyper);
            let fit = fit_mfvb_three_level(&design, &hyper, &fit_options(a.tol, a.max_iter))?;
            log::info!("MFVB finished after {} cycles (converged: {})", fit.iterations, fit.converged);
            ThreeLevelFitRecord::Mfvb { hyper, fit }
        }
        Method::Blup => {
            let path = a
                .variances
                .as_deref()
                .ok_or_else(|| Error::InvalidInput("BLUP needs --variances".into()))?;
            let v: VarianceFile = read_json(path)?;
            ThreeLevelFitRecord::Blup(fit_blup_three_level(&design, &v.three_level()?)?)
        }
    };
    FitArtifact::new(FittedModel::ThreeLevel {
        labels: design.labels.clone(),
        sub_labels: design.sub_labels.clone(),
        x_range: design.x_range,
        basis_gbl: design.basis_gbl,
        basis_g: design.basis_g,
        basis_h: design.basis_h,
        fit,
    })
    .save(&a.out)
}

/// Run a parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit2(a) => fit2(&a),
        Command::Fit3 { fit, kgrp_h } => fit3(&fit, kgrp_h),
        Command::Predict { fit, grid, target, level, out } => {
            let art = FitArtifact::load(&fit)?;
            let target = art.resolve(&target.parse::<TargetSpec>()?)?;
            let grid = parse_grid(&grid, art.x_range())?;
            write_band(&art.band(&grid, target, level)?, out.as_deref())
        }
        Command::ContrastFit { data, category_a, kgbl, kgrp, hyper, tol, max_iter, out } => {
            let data = read_categorized(open(&data)?, category_a.as_deref())?;
            let design = crate::contrast::build_contrast_design(&data, kgbl, kgrp)?;
            let mut h = HyperparametersTwoLevel::default_for(&design);
            hyper_overrides(&hyper)?.apply_two_level(&mut h);
            let cf = fit_contrast(&data, kgbl, kgrp, Some(&h), &fit_options(tol, max_iter))?;
            log::info!("contrast fit finished after {} cycles (converged: {})", cf.fit.iterations, cf.fit.converged);
            FitArtifact::new(FittedModel::Contrast {
                labels: cf.design.labels.clone(),
                category_a: cf.category_a,
                category_b: cf.category_b,
                x_range: cf.design.x_range,
                basis_gbl: cf.design.basis_gbl,
                basis_grp: cf.design.basis_grp,
                hyper: h,
                fit: cf.fit,
            })
            .save(&out)
        }
        Command::ContrastCurve { fit, grid, level, out } => {
            let art = FitArtifact::load(&fit)?;
            if !matches!(art.model, FittedModel::Contrast { .. }) {
                return Err(Error::InvalidInput("contrast-curve needs a contrast-fit artifact".into()));
            }
            let grid = parse_grid(&grid, art.x_range())?;
            write_band(&art.band(&grid, crate::predict::Target::Global, level)?, out.as_deref())
        }
        Command::Simulate2 { m, seed, with_category, contrast_shift, out } => {
            validate_m(m)?;
            let cfg = SimConfig::new(m, seed);
            let w = BufWriter::new(File::create(&out)?);
            if with_category {
                if m < 2 {
                    return Err(Error::InvalidInput("two categories need at least 2 groups".into()));
                }
                write_categorized(w, &simulate_categorized(&cfg, |_| contrast_shift))
            } else {
                write_two_level(w, &simulate_two_level(&cfg))
            }
        }
        Command::Simulate3 { m, seed, out } => {
            validate_m(m)?;
            write_three_level(BufWriter::new(File::create(&out)?), &simulate_three_level(&ThreeLevelSimConfig::new(m, seed)))
        }
        Command::Bench { ms, reps, fixed_iters, seed, cap, out, json } => {
            let cfg = BenchConfig {
                ms,
                replications: reps,
                fixed_iterations: fixed_iters,
                seed,
                dimension_cap: cap,
                ..BenchConfig::default()
            };
            let report = run_benchmark(&cfg)?;
            let text = records_to_csv(&report.records)?;
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => io::stdout().lock().write_all(text.as_bytes())?,
            }
            if let Some(p) = json {
                serde_json::to_writer_pretty(BufWriter::new(File::create(p)?), &report)?;
            }
            log::info!(
                "log-log slope: streamlined {:?}, naive {:?}; naive refused at {:?}",
                report.slope_streamlined,
                report.slope_naive,
                report.naive_refused
            );
            Ok(())
        }
    }
}

fn validate_m(m: usize) -> Result<()> {
    if m == 0 {
        Err(Error::InvalidInput("--m must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn init_logging(quiet: bool, json: bool) {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "error" } else { "info" }));
    if quiet {
        b.filter_level(log::LevelFilter::Error);
    }
    if json {
        b.format(|buf, rec| {
            let line = serde_json::json!({
                "level": rec.level().to_string(),
                "target": rec.target(),
                "message": rec.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    // A second initialization in the same process (tests) is harmless.
    let _ = b.try_init();
}

fn init_threads() {
    if let Some(n) = std::env::var("CURVESTREAM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parse `argv`, run, and return the process exit code: 0 on success, 1 for
/// invalid input, 2 for numerical failure.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.quiet, cli.json_logs);
    init_threads();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}
