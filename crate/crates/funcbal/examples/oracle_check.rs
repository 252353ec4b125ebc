//! Generate one synthetic replicate with a known treatment-effect surface,
//! fit the balancing estimator, and compare it against the analytic truth
//! and against the infeasible oracle that uses the true stabilized weights.
//!
//! Usage: `cargo run --release --example oracle_check [setting]`

use funcbal::simulate::{
    empirical_mse, gen_eval_points, gen_replicate, oos_mse, oracle_wmkrr, SimConfig,
};
use funcbal::tuning::fit_cfb;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setting: u8 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(1);
    let cfg = SimConfig::new(setting, 200, 1, 99);
    cfg.validate()?;

    let data = gen_replicate(&cfg, 1)?;
    let eval = gen_eval_points(&cfg, 2)?;
    println!(
        "setting {setting}: n = {} subjects, {} evaluation curves",
        data.y.len(),
        eval.tau.len()
    );

    let (model, tuning) = fit_cfb(&data.treatments, &data.x, &data.y, &cfg.fit)?;
    println!(
        "fitted: lambda = {:.3e}, eta = {:.3e}, weights in [{:.2}, {:.2}]",
        tuning.lambda, tuning.eta, tuning.weight_min, tuning.weight_max
    );
    println!(
        "balancing estimator:  in-sample MSE {:.2}, out-of-sample MSE {:.2}",
        empirical_mse(&model, &data)?,
        oos_mse(&model, &eval)?
    );

    let oracle = oracle_wmkrr(&data, &cfg.fit)?;
    println!(
        "true-weight oracle:   in-sample MSE {:.2}, out-of-sample MSE {:.2}",
        empirical_mse(&oracle, &data)?,
        oos_mse(&oracle, &eval)?
    );

    let pred = model.predict(&eval.treatments)?;
    println!("\nfirst five evaluation curves (estimate vs truth):");
    for i in 0..5 {
        println!("  {:+8.3} vs {:+8.3}", pred[i], eval.tau[i]);
    }
    Ok(())
}
