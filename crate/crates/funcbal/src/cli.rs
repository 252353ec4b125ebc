//! Command-line interface: `simulate`, `fit`, `weights`, `predict` and
//! `selftest` subcommands.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error (file shapes, ids,
//! parsing), 4 numeric/convergence failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::funcrep::TreatmentSet;
use crate::io::{
    align_ids, fmt17, load_model, read_covariates, read_dense_treatments, read_outcomes,
    read_sample_set_treatments, save_model, write_id_value_csv, write_sim_report_csv,
    write_sim_summary_markdown, SavedModel, MODEL_SCHEMA_VERSION,
};
use crate::simulate::{run_study, EstimatorKind, SimConfig};
use crate::tuning::{fit_cfb, FitConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Parser)]
#[command(
    name = "funcbal",
    about = "Covariate balancing weights and weight-modified kernel ridge \
             regression for functional treatment effects",
    version
)]
struct Cli {
    /// Number of worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicate simulation study and write report files.
    Simulate(SimulateArgs),
    /// Fit the balancing-weight estimator on CSV data and save the model.
    Fit(FitArgs),
    /// Re-emit the balancing weights stored in a fitted model.
    Weights(WeightsArgs),
    /// Evaluate a fitted model at new treatments.
    Predict(PredictArgs),
    /// Run a fast internal property suite and print pass/fail lines.
    Selftest,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation design: 1 (linear effect), 2 (nonlinear, additive) or
    /// 3 (nonlinear with covariate interaction).
    #[arg(long)]
    setting: u8,
    /// Subjects per replicate.
    #[arg(long)]
    n: usize,
    /// Number of replicates.
    #[arg(long)]
    reps: usize,
    /// Root seed; each replicate derives child seeds deterministically.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated estimator list
    /// (cfb,nw,reg,fpc-baseline,oracle-weights).
    #[arg(long)]
    estimators: Option<String>,
    /// Optional TOML config overriding fit settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Treatment CSV: header `id,t,value` (dense trajectories) or `id,t`
    /// (sample sets; requires base_kernel in the config file).
    #[arg(long)]
    treatments: PathBuf,
    /// Covariate CSV: header `id,<names...>`.
    #[arg(long)]
    covariates: PathBuf,
    /// Outcome CSV: header `id,y`.
    #[arg(long)]
    outcomes: PathBuf,
    /// Output model file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Optional TOML config (kernels, grids, solver options).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct WeightsArgs {
    /// Fitted model file from `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Output CSV `id,weight`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Fitted model file from `fit`.
    #[arg(long)]
    model: PathBuf,
    /// New treatments CSV in the model's representation.
    #[arg(long)]
    at: PathBuf,
    /// Output CSV `id,tau_hat`.
    #[arg(long)]
    out: PathBuf,
}

/// On-disk configuration. Unknown keys anywhere are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    fit: FitConfig,
    /// Base kernel for sample-set treatments (`id,t` input format). The
    /// bandwidth must be explicit; there is no heuristic for raw point sets.
    base_kernel: Option<crate::kernels::KernelSpec>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::Parse {
                line: 0,
                msg: format!("invalid config {}: {e}", p.display()),
            })
        }
    }
}

/// Entry point used by `main`; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with successful exit
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_USAGE;
        }
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Weights(a) => cmd_weights(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Selftest => return cmd_selftest(),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_NUMERIC
            }
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let file_cfg = load_config(args.config.as_deref())?;
    let mut cfg = SimConfig::new(args.setting, args.n, args.reps, args.seed);
    cfg.fit = file_cfg.fit;
    if let Some(list) = &args.estimators {
        let mut kinds = Vec::new();
        for name in list.split(',') {
            kinds.push(EstimatorKind::parse(name.trim())?);
        }
        cfg.estimators = kinds;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&args.out)?;
    let report = run_study(&cfg)?;
    let csv_path = args.out.join(format!(
        "study_setting{}_seed{}.csv",
        cfg.setting, cfg.seed
    ));
    let md_path = args.out.join(format!(
        "study_setting{}_seed{}.md",
        cfg.setting, cfg.seed
    ));
    write_sim_report_csv(&csv_path, &report)?;
    write_sim_summary_markdown(&md_path, &report)?;
    for s in &report.summaries {
        println!(
            "{} {}: mean {:.3} (se {:.3}, {} replicates, {} failures)",
            s.estimator, s.metric, s.mean, s.standard_error, s.replicates_used, s.failures
        );
    }
    println!("wrote {}", csv_path.display());
    println!("wrote {}", md_path.display());
    Ok(())
}

/// Read a treatment CSV, deciding the representation from the header.
fn read_treatments_auto(
    path: &Path,
    cfg: &FileConfig,
) -> Result<(Vec<String>, TreatmentSet)> {
    let first_line = {
        use std::io::BufRead;
        let f = std::fs::File::open(path)?;
        let mut line = String::new();
        std::io::BufReader::new(f).read_line(&mut line)?;
        line.trim().to_ascii_lowercase()
    };
    let cols: Vec<&str> = first_line.split(',').map(|s| s.trim()).collect();
    if cols == ["id", "t", "value"] {
        read_dense_treatments(path)
    } else if cols == ["id", "t"] {
        let base = cfg.base_kernel.as_ref().ok_or_else(|| {
            Error::InvalidInput(
                "sample-set treatments (header 'id,t') need base_kernel in the config file"
                    .into(),
            )
        })?;
        read_sample_set_treatments(path, base)
    } else {
        Err(Error::Parse {
            line: 1,
            msg: format!(
                "expected treatment header 'id,t,value' or 'id,t', found '{first_line}'"
            ),
        })
    }
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let (tids, treatments) = read_treatments_auto(&args.treatments, &cfg)?;
    let (cids, _names, x) = read_covariates(&args.covariates)?;
    let (oids, y) = read_outcomes(&args.outcomes)?;
    let triples = align_ids(&tids, &cids, &oids)?;

    let items: Vec<_> = triples
        .iter()
        .map(|&(i, _, _)| treatments.items()[i].clone())
        .collect();
    let set = TreatmentSet::new(items)?;
    let ids: Vec<String> = triples.iter().map(|&(i, _, _)| tids[i].clone()).collect();
    let xa = DMatrix::from_fn(triples.len(), x.ncols(), |r, c| x[(triples[r].1, c)]);
    let ya = DVector::from_fn(triples.len(), |r, _| y[triples[r].2]);

    let (model, tuning) = fit_cfb(&set, &xa, &ya, &cfg.fit)?;
    println!(
        "fitted {} subjects: lambda {}, eta {}, weights in [{:.4}, {:.4}]",
        ids.len(),
        fmt17(tuning.lambda),
        fmt17(tuning.eta),
        tuning.weight_min,
        tuning.weight_max
    );
    save_model(
        &args.out,
        &SavedModel {
            schema_version: MODEL_SCHEMA_VERSION,
            ids,
            model,
            tuning: Some(tuning),
        },
    )?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_weights(args: WeightsArgs) -> Result<()> {
    let saved = load_model(&args.model)?;
    let w = saved.model.weights().ok_or_else(|| {
        Error::InvalidInput("model does not carry balancing weights".into())
    })?;
    write_id_value_csv(&args.out, "weight", &saved.ids, w)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let saved = load_model(&args.model)?;
    // An input with a valid header and zero rows is a legal (vacuous) query.
    let has_rows = {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(&args.at)
            .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", args.at.display())))?;
        rdr.records().next().is_some()
    };
    if !has_rows {
        std::fs::write(&args.out, "id,tau_hat\n")?;
        println!("wrote {} (no input rows)", args.out.display());
        return Ok(());
    }
    let base_kernel = match &saved.model {
        crate::model::FteModel::Krr(m) => m
            .train
            .items()
            .iter()
            .find_map(|it| match it {
                crate::funcrep::FunctionalSample::Embedded(s) => Some(s.base_kernel().clone()),
                crate::funcrep::FunctionalSample::Dense(_) => None,
            }),
        crate::model::FteModel::FpcLinear(_) => None,
    };
    let cfg = FileConfig {
        fit: FitConfig::default(),
        base_kernel,
    };
    let (ids, set) = read_treatments_auto(&args.at, &cfg)?;
    let tau = saved.model.predict(&set)?;
    write_id_value_csv(&args.out, "tau_hat", &ids, tau.as_slice())?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_selftest() -> i32 {
    let checks: Vec<(&str, Box<dyn Fn() -> Result<()>>)> = vec![
        ("loocv closed form matches refits", Box::new(selftest_loocv)),
        ("balance gradient matches finite differences", Box::new(selftest_gradient)),
        ("balance objective is midpoint convex", Box::new(selftest_convexity)),
        ("psd factorization reconstructs the gram", Box::new(selftest_factor)),
        ("solver weights are feasible and stable", Box::new(selftest_solver)),
    ];
    let mut failures = 0;
    for (name, f) in checks {
        match f() {
            Ok(()) => println!("PASS {name}"),
            Err(e) => {
                failures += 1;
                println!("FAIL {name}: {e}");
            }
        }
    }
    if failures == 0 {
        println!("selftest: all checks passed");
        EXIT_OK
    } else {
        println!("selftest: {failures} check(s) failed");
        EXIT_NUMERIC
    }
}

fn selftest_data(n: usize, seed: u64) -> Result<(TreatmentSet, DMatrix<f64>, DVector<f64>)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let grid = crate::funcrep::uniform_grid(21);
    let mut trajs = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.gen_range(-2.0..2.0);
        let b: f64 = rng.gen_range(-1.0..1.0);
        trajs.push(crate::funcrep::DenseTrajectory::new(
            grid.clone(),
            grid.iter()
                .map(|t| a * (std::f64::consts::TAU * t).sin() + b)
                .collect(),
        )?);
    }
    let set = TreatmentSet::from_dense(trajs)?;
    let x = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
    let y = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    Ok((set, x, y))
}

fn selftest_grams(n: usize, seed: u64) -> Result<crate::kernels::GramSet> {
    let (set, x, _) = selftest_data(n, seed)?;
    let spec = crate::tuning::KernelConfig::default()
        .resolve(&crate::funcrep::pairwise_distance_sq(&set)?)?;
    let spec_x = crate::tuning::KernelConfig::default()
        .resolve(&crate::kernels::row_distance_sq(&x)?)?;
    crate::kernels::GramSet::from_data(&set, &x, &spec, &spec_x)
}

fn selftest_problem(seed: u64) -> Result<crate::balance::BalanceProblem> {
    let grams = selftest_grams(8, seed)?;
    let gf = crate::gram::assemble_gf(&grams)?;
    let factor = crate::gram::psd_factor(&gf, 1e-10)?;
    crate::balance::build_problem(&grams, &factor, 0.05, 0.1, f64::INFINITY)
}

fn selftest_loocv() -> Result<()> {
    let (set, _, y) = selftest_data(9, 11)?;
    let spec = crate::tuning::KernelConfig::default()
        .resolve(&crate::funcrep::pairwise_distance_sq(&set)?)?;
    let g = crate::kernels::gram_treatment(&set, &spec)?;
    let n = g.nrows();
    for &lam in &[1e-3, 1e-2, 1e-1] {
        let fast = crate::krr::loocv_error(&g, &y, lam)?;
        // Brute force: drop each point, refit with the same absolute
        // regularizer n*lambda, and predict the held-out response.
        let mut acc = 0.0;
        for i in 0..n {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let mut gs = DMatrix::zeros(n - 1, n - 1);
            for (r, &jr) in keep.iter().enumerate() {
                for (c, &jc) in keep.iter().enumerate() {
                    gs[(r, c)] = g[(jr, jc)];
                }
            }
            let zs = DVector::from_fn(n - 1, |r, _| y[keep[r]]);
            let reg = n as f64 * lam;
            let alpha = (gs.clone() + DMatrix::identity(n - 1, n - 1) * reg)
                .lu()
                .solve(&zs)
                .ok_or_else(|| Error::SolveFailure("singular LOO system".into()))?;
            let pred: f64 = keep
                .iter()
                .enumerate()
                .map(|(r, &jr)| g[(i, jr)] * alpha[r])
                .sum();
            let res = y[i] - pred;
            acc += res * res;
        }
        let slow = acc / n as f64;
        if (fast - slow).abs() > 1e-8 * (1.0 + slow.abs()) {
            return Err(Error::SolveFailure(format!(
                "loocv mismatch at lambda {lam}: {fast} vs {slow}"
            )));
        }
    }
    Ok(())
}

fn selftest_gradient() -> Result<()> {
    use rand::{Rng, SeedableRng};
    let p = selftest_problem(21)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
    for _ in 0..5 {
        let w = DVector::from_fn(p.n, |_, _| rng.gen_range(0.2..2.0));
        let grad = crate::balance::balance_gradient(&p, &w)?;
        let eps = 1e-5;
        for j in 0..p.n {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += eps;
            wm[j] -= eps;
            let (fp, _, _) = crate::balance::balance_objective(&p, &wp)?;
            let (fm, _, _) = crate::balance::balance_objective(&p, &wm)?;
            let fd = (fp - fm) / (2.0 * eps);
            if (grad[j] - fd).abs() > 1e-4 * (1.0 + fd.abs()) {
                return Err(Error::SolveFailure(format!(
                    "gradient mismatch at coordinate {j}: {} vs {fd}",
                    grad[j]
                )));
            }
        }
    }
    Ok(())
}

fn selftest_convexity() -> Result<()> {
    use rand::{Rng, SeedableRng};
    let p = selftest_problem(31)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(32);
    for _ in 0..100 {
        let w1 = DVector::from_fn(p.n, |_, _| rng.gen_range(0.0..2.0));
        let w2 = DVector::from_fn(p.n, |_, _| rng.gen_range(0.0..2.0));
        let t: f64 = rng.gen_range(0.0..1.0);
        let wm = &w1 * t + &w2 * (1.0 - t);
        let (f1, _, _) = crate::balance::balance_objective(&p, &w1)?;
        let (f2, _, _) = crate::balance::balance_objective(&p, &w2)?;
        let (fm, _, _) = crate::balance::balance_objective(&p, &wm)?;
        let bound = t * f1 + (1.0 - t) * f2;
        if fm > bound + 1e-8 * (1.0 + bound.abs()) {
            return Err(Error::SolveFailure(format!(
                "convexity violated: {fm} > {bound}"
            )));
        }
    }
    Ok(())
}

fn selftest_factor() -> Result<()> {
    let grams = selftest_grams(10, 41)?;
    let gf = crate::gram::assemble_gf(&grams)?;
    let factor = crate::gram::psd_factor(&gf, 1e-10)?;
    let recon = &factor.m * factor.m.transpose();
    let scale = gf.abs().max().max(1.0);
    let err = (&recon - &gf).abs().max();
    if err > 1e-8 * scale {
        return Err(Error::SolveFailure(format!(
            "psd factorization residual {err}"
        )));
    }
    Ok(())
}

fn selftest_solver() -> Result<()> {
    use rand::{Rng, SeedableRng};
    let p = selftest_problem(51)?;
    let init = DVector::from_element(p.n, 1.0);
    let sol =
        crate::balance::solve_weights(&p, &init, &crate::balance::SolveOptions::default())?;
    let (f_star, _, _) = crate::balance::balance_objective(&p, &sol.w_hat)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(52);
    for _ in 0..20 {
        let probe =
            DVector::from_fn(p.n, |i, _| (sol.w_hat[i] + rng.gen_range(-0.1..0.1)).max(0.0));
        let (f_probe, _, _) = crate::balance::balance_objective(&p, &probe)?;
        if f_probe < f_star - 1e-7 * (1.0 + f_star.abs()) {
            return Err(Error::SolveFailure(format!(
                "probe beat the solver: {f_probe} < {f_star}"
            )));
        }
    }
    Ok(())
}
