//! Run a small replicate study comparing the estimators on one simulation
//! design, mirroring what `funcbal simulate` does from the command line.
//!
//! Usage: `cargo run --release --example simulate_study [setting] [n] [reps]`

use funcbal::simulate::{run_study, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let setting: u8 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let reps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);

    let cfg = SimConfig::new(setting, n, reps, 2024);
    cfg.validate()?;
    println!(
        "setting {setting}, n = {n}, {reps} replicates (seed {})",
        cfg.seed
    );
    let report = run_study(&cfg)?;

    println!("{:<14} {:<14} {:>10} {:>8}", "estimator", "metric", "mean", "se");
    for s in &report.summaries {
        println!(
            "{:<14} {:<14} {:>10.2} {:>8.2}",
            s.estimator, s.metric, s.mean, s.standard_error
        );
    }
    Ok(())
}
