//! Streamlined versus dense variational fits, timed over group counts.
//!
//! cargo run --release --example benchmark -- [ms] [reps] [cap]
//! e.g. `-- 50,100,200,400 3 5000`

use curvestream::simbench::{records_to_csv, run_benchmark, BenchConfig};

fn main() -> curvestream::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = BenchConfig::default();
    if let Some(ms) = args.next() {
        cfg.ms = ms.split(',').map(|s| s.trim().parse().expect("group counts must be integers")).collect();
    }
    if let Some(r) = args.next() {
        cfg.replications = r.parse().expect("replications must be an integer");
    }
    if let Some(c) = args.next() {
        cfg.dimension_cap = c.parse().expect("cap must be an integer");
    }
    let report = run_benchmark(&cfg)?;
    print!("{}", records_to_csv(&report.records)?);
    println!("\nlog-log slope, streamlined: {:?}", report.slope_streamlined);
    println!("log-log slope, dense:       {:?}", report.slope_naive);
    for (m, r) in report.ratios() {
        println!("m = {m:4}: dense / streamlined = {r:.1}");
    }
    if !report.naive_refused.is_empty() {
        println!("dense refused at m = {:?}", report.naive_refused);
    }
    Ok(())
}
