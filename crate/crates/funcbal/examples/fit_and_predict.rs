//! Fit the covariate-balancing estimator on the bundled CSV dataset and
//! evaluate it at held-out treatment curves.
//!
//! Usage: `cargo run --example fit_and_predict`

use funcbal::io::{
    align_ids, read_covariates, read_dense_treatments, read_outcomes,
};
use funcbal::tuning::{fit_cfb, FitConfig};
use nalgebra::{DMatrix, DVector};
use std::path::Path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let (tids, treatments) = read_dense_treatments(&data.join("example_treatments.csv"))?;
    let (cids, names, x) = read_covariates(&data.join("example_covariates.csv"))?;
    let (oids, y) = read_outcomes(&data.join("example_outcomes.csv"))?;

    let triples = align_ids(&tids, &cids, &oids)?;
    let items: Vec<_> = triples
        .iter()
        .map(|&(i, _, _)| treatments.items()[i].clone())
        .collect();
    let set = funcbal::funcrep::TreatmentSet::new(items)?;
    let xa = DMatrix::from_fn(triples.len(), x.ncols(), |r, c| x[(triples[r].1, c)]);
    let ya = DVector::from_fn(triples.len(), |r, _| y[triples[r].2]);
    println!(
        "{} subjects, covariates [{}]",
        triples.len(),
        names.join(", ")
    );

    let (model, tuning) = fit_cfb(&set, &xa, &ya, &FitConfig::default())?;
    println!(
        "selected lambda = {:.4e}, eta = {:.4e}",
        tuning.lambda, tuning.eta
    );
    println!(
        "weights: min {:.3}, mean {:.3}, max {:.3}",
        tuning.weight_min, tuning.weight_mean, tuning.weight_max
    );

    let (new_ids, new_set) =
        read_dense_treatments(&data.join("example_new_treatments.csv"))?;
    let tau = model.predict(&new_set)?;
    println!("\npredicted effects at held-out curves:");
    for (id, t) in new_ids.iter().zip(tau.iter()) {
        println!("  {id}: {t:+.4}");
    }
    Ok(())
}
