//! Simulated data, the dense baseline, timing and the accuracy functional.
//!
//! The two-level generator draws `x ~ U(0, 1)` and group sizes from
//! `{30, …, 60}` and uses
//!
//! ```text
//! f(x)   = 3 √(x(1.3 − x)) Φ(6x − 3)
//! g_i(x) = α₁ α₂ sin(2π x^α₃),  α₁ ~ N(1/4, 1/4), α₂ ∈ {−1, 1}, α₃ ∈ {1, 2, 3}
//! ```
//!
//! with noise sd 0.2. Each group draws from its own ChaCha8 stream (stream
//! index = group index, key from the seed), so groups can be generated in
//! parallel and the output does not depend on the thread count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::data::{
    CategorizedGroup, CategorizedTwoLevelData, Group, Subgroup, ThreeLevelData, ThreeLevelGroup, TwoLevelData,
};

pub mod accuracy;
pub mod bench;
pub mod naive;

pub use accuracy::accuracy;
pub use bench::{loglog_slope, records_to_csv, run_benchmark, BenchConfig, BenchReport, TimingRecord, Variant};
pub use naive::{
    elbo_two_level_direct, naive_cycle_three_level, naive_cycle_two_level, naive_mfvb_three_level,
    naive_mfvb_two_level, DenseSystem, DEFAULT_DIMENSION_CAP,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub m: usize,
    /// Inclusive range of group sizes.
    pub n_range: (usize, usize),
    pub sigma_eps: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(m: usize, seed: u64) -> Self {
        Self { m, n_range: (30, 60), sigma_eps: 0.2, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelSimConfig {
    pub m: usize,
    /// Inclusive range of subgroup counts per group.
    pub n_range: (usize, usize),
    /// Inclusive range of observations per subgroup.
    pub o_range: (usize, usize),
    pub sigma_eps: f64,
    pub seed: u64,
}

impl ThreeLevelSimConfig {
    pub fn new(m: usize, seed: u64) -> Self {
        Self { m, n_range: (3, 6), o_range: (20, 40), sigma_eps: 0.2, seed }
    }
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    StdNormal::new(0.0, 1.0).expect("standard normal").cdf(x)
}

/// True global mean curve.
pub fn f_true(x: f64) -> f64 {
    3.0 * (x * (1.3 - x)).sqrt() * phi(6.0 * x - 3.0)
}

/// Random deviation curve `amp · α₁ α₂ sin(2π x^α₃)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: i32,
    pub amp: f64,
}

impl Deviation {
    pub fn draw<R: Rng>(rng: &mut R, amp: f64) -> Self {
        let a1 = Normal::new(0.25, 0.5).expect("valid normal");
        Self {
            alpha1: a1.sample(rng),
            alpha2: if rng.random::<bool>() { 1.0 } else { -1.0 },
            alpha3: rng.random_range(1..=3),
            amp,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amp * self.alpha1 * self.alpha2 * (2.0 * std::f64::consts::PI * x.powi(self.alpha3)).sin()
    }
}

fn group_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_group<R: Rng>(rng: &mut R, n_range: (usize, usize), sigma: f64, shift: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(n_range.0..=n_range.1);
    let g = Deviation::draw(rng, 1.0);
    let noise = Normal::new(0.0, sigma).expect("valid noise sd");
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y = x.iter().map(|&xv| f_true(xv) + shift(xv) + g.eval(xv) + noise.sample(rng)).collect();
    (x, y)
}

fn label(prefix: &str, i: usize) -> String {
    format!("{prefix}{:04}", i + 1)
}

pub fn simulate_two_level(cfg: &SimConfig) -> TwoLevelData {
    let groups = (0..cfg.m)
        .into_par_iter()
        .map(|i| {
            let mut rng = group_rng(cfg.seed, i as u64);
            let (x, y) = draw_group(&mut rng, cfg.n_range, cfg.sigma_eps, |_| 0.0);
            Group { label: label("G", i), x, y }
        })
        .collect();
    TwoLevelData { groups }
}

/// Two-category data: half the groups (chosen at random) are category B and
/// have `contrast(x)` added to their mean. Needs `m ≥ 2`.
pub fn simulate_categorized(cfg: &SimConfig, contrast: impl Fn(f64) -> f64 + Sync) -> CategorizedTwoLevelData {
    let mut is_a: Vec<bool> = (0..cfg.m).map(|i| i < cfg.m.div_ceil(2)).collect();
    is_a.shuffle(&mut group_rng(cfg.seed, u64::MAX));
    let groups = (0..cfg.m)
        .into_par_iter()
        .map(|i| {
            let mut rng = group_rng(cfg.seed, i as u64);
            let a = is_a[i];
            let (x, y) = draw_group(&mut rng, cfg.n_range, cfg.sigma_eps, |xv| if a { 0.0 } else { contrast(xv) });
            CategorizedGroup { label: label("G", i), iota: vec![a; x.len()], x, y }
        })
        .collect();
    CategorizedTwoLevelData { groups, category_a: "A".into(), category_b: "B".into() }
}

/// Three-level data. Subgroup deviations have amplitude ½ relative to the
/// group deviations.
pub fn simulate_three_level(cfg: &ThreeLevelSimConfig) -> ThreeLevelData {
    let groups = (0..cfg.m)
        .into_par_iter()
        .map(|i| {
            let mut rng = group_rng(cfg.seed, i as u64);
            let g = Deviation::draw(&mut rng, 1.0);
            let n = rng.random_range(cfg.n_range.0..=cfg.n_range.1);
            let noise = Normal::new(0.0, cfg.sigma_eps).expect("valid noise sd");
            let subgroups = (0..n)
                .map(|j| {
                    let h = Deviation::draw(&mut rng, 0.5);
                    let o = rng.random_range(cfg.o_range.0..=cfg.o_range.1);
                    let x: Vec<f64> = (0..o).map(|_| rng.random::<f64>()).collect();
                    let y = x.iter().map(|&xv| f_true(xv) + g.eval(xv) + h.eval(xv) + noise.sample(&mut rng)).collect();
                    Subgroup { label: label("S", j), x, y }
                })
                .collect();
            ThreeLevelGroup { label: label("G", i), subgroups }
        })
        .collect();
    ThreeLevelData { groups }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_at_half() {
        assert!((f_true(0.5) - 1.5 * 0.4_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn seeded_determinism() {
        let a = simulate_two_level(&SimConfig::new(5, 3));
        let b = simulate_two_level(&SimConfig::new(5, 3));
        assert_eq!(a, b);
        assert_ne!(a, simulate_two_level(&SimConfig::new(5, 4)));
        for g in &a.groups {
            assert!((30..=60).contains(&g.x.len()));
        }
    }

    #[test]
    fn categorized_has_both() {
        let d = simulate_categorized(&SimConfig::new(6, 1), |_| 0.0);
        let a = d.groups.iter().filter(|g| g.iota[0]).count();
        assert_eq!(a, 3);
    }
}
