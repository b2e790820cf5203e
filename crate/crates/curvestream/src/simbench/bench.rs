//! Timing of streamlined versus dense MFVB over a range of group counts.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::naive::naive_mfvb_two_level;
use super::{simulate_two_level, SimConfig};
use crate::design::{TwoLevelDesign, DEFAULT_K_GBL, DEFAULT_K_GRP};
use crate::error::{Error, Result};
use crate::mfvb::{fit_mfvb_two_level, FitOptions, HyperparametersTwoLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Naive,
    Streamlined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub m: usize,
    pub variant: Variant,
    pub mean_s: f64,
    pub sd_s: f64,
    pub iterations: usize,
    pub replications: usize,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub ms: Vec<usize>,
    pub replications: usize,
    pub fixed_iterations: usize,
    pub seed: u64,
    pub k_gbl: usize,
    pub k_grp: usize,
    /// Dense runs are skipped (and listed in the report) above this many
    /// coefficients.
    pub dimension_cap: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ms: vec![50, 100, 200, 400],
            replications: 3,
            fixed_iterations: 50,
            seed: 1,
            k_gbl: DEFAULT_K_GBL,
            k_grp: DEFAULT_K_GRP,
            dimension_cap: super::naive::DEFAULT_DIMENSION_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<TimingRecord>,
    /// Least squares slope of log seconds on log m.
    pub slope_streamlined: Option<f64>,
    pub slope_naive: Option<f64>,
    /// Group counts the dense variant refused.
    pub naive_refused: Vec<usize>,
}

impl BenchReport {
    /// Naive over streamlined mean time, for each m where both ran.
    pub fn ratios(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter(|r| r.variant == Variant::Naive)
            .filter_map(|n| {
                self.records
                    .iter()
                    .find(|s| s.variant == Variant::Streamlined && s.m == n.m)
                    .map(|s| (n.m, n.mean_s / s.mean_s))
            })
            .collect()
    }
}

/// Least squares slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.ms.is_empty() || cfg.replications == 0 || cfg.fixed_iterations == 0 {
        return Err(Error::InvalidInput("benchmark needs group counts, replications and iterations".into()));
    }
    if cfg.ms.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("group counts must be strictly ascending".into()));
    }
    let opts = FitOptions::fixed(cfg.fixed_iterations);
    let threads = rayon::current_num_threads();
    let mut records = Vec::new();
    let mut refused = Vec::new();
    for &m in &cfg.ms {
        let data = simulate_two_level(&SimConfig::new(m, cfg.seed));
        let design = TwoLevelDesign::new(&data, cfg.k_gbl, cfg.k_grp)?;
        let hyper = HyperparametersTwoLevel::default_for(&design);
        let mut stream = Vec::with_capacity(cfg.replications);
        let mut dense = Vec::with_capacity(cfg.replications);
        for _ in 0..cfg.replications {
            let t = Instant::now();
            fit_mfvb_two_level(&design, &hyper, &opts)?;
            stream.push(t.elapsed().as_secs_f64());
        }
        for _ in 0..cfg.replications {
            let t = Instant::now();
            match naive_mfvb_two_level(&design, &hyper, &opts, cfg.dimension_cap) {
                Ok(_) => dense.push(t.elapsed().as_secs_f64()),
                Err(Error::DimensionCapExceeded { dim, cap }) => {
                    log::info!("naive fit skipped at m = {m}: {dim} coefficients exceed the cap {cap}");
                    refused.push(m);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        for (variant, times) in [(Variant::Streamlined, &stream), (Variant::Naive, &dense)] {
            if times.is_empty() {
                continue;
            }
            let (mean_s, sd_s) = mean_sd(times);
            log::info!("m = {m}, {variant:?}: {mean_s:.4} s (sd {sd_s:.4})");
            records.push(TimingRecord {
                m,
                variant,
                mean_s,
                sd_s,
                iterations: cfg.fixed_iterations,
                replications: times.len(),
                threads,
            });
        }
    }
    let slope = |v: Variant| {
        let (x, y): (Vec<f64>, Vec<f64>) =
            records.iter().filter(|r| r.variant == v).map(|r| (r.m as f64, r.mean_s)).unzip();
        loglog_slope(&x, &y)
    };
    Ok(BenchReport {
        slope_streamlined: slope(Variant::Streamlined),
        slope_naive: slope(Variant::Naive),
        records,
        naive_refused: refused,
    })
}

/// Table of records as CSV text with columns `m,variant,mean_s,sd_s,iterations,replications,threads`.
pub fn records_to_csv(records: &[TimingRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}
