//! Simulation designs, analytic effect truths, replicate studies and the
//! two MSE metrics.
//!
//! The treatment is the random Fourier sum `A(t) = sum_k A_k sqrt(2)
//! sin(2 pi k t)` with `A_k | X ~ N(c_k X_k, 1)` and `X ~ N(0, I_4)`, so the
//! coefficient marginals are `N(0, 17), N(0, 13), N(0, 9), N(0, 5)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    fpc_baseline, nw_fit, oracle_weights, select_lambda_loocv, DGP_COEF_SCALES,
};
use crate::funcrep::{uniform_grid, DenseTrajectory, TreatmentSet};
use crate::kernels::{gram_treatment, median_heuristic};
use crate::krr::krr_fit;
use crate::model::{FteModel, KrrModel};
use crate::tuning::{fit_cfb, fit_reg, FitConfig};
use crate::estimators::default_lambda_grid;
use crate::funcrep::pairwise_distance_sq;

/// Estimators the study can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Balancing-weight WMKRR (the proposed method).
    Cfb,
    /// Unweighted kernel ridge regression.
    Nw,
    /// Outcome regression with the tensor-product kernel.
    Reg,
    /// Stabilized-weight FPC linear baseline.
    FpcBaseline,
    /// WMKRR with the true (oracle) weights; simulation diagnostics only.
    OracleWeights,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Cfb => "cfb",
            EstimatorKind::Nw => "nw",
            EstimatorKind::Reg => "reg",
            EstimatorKind::FpcBaseline => "fpc-baseline",
            EstimatorKind::OracleWeights => "oracle-weights",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cfb" => Ok(EstimatorKind::Cfb),
            "nw" => Ok(EstimatorKind::Nw),
            "reg" => Ok(EstimatorKind::Reg),
            "fpc-baseline" | "fpc" => Ok(EstimatorKind::FpcBaseline),
            "oracle-weights" | "oracle" => Ok(EstimatorKind::OracleWeights),
            other => Err(Error::InvalidInput(format!("unknown estimator '{other}'"))),
        }
    }
}

pub const DEFAULT_ESTIMATORS: [EstimatorKind; 4] = [
    EstimatorKind::Cfb,
    EstimatorKind::Nw,
    EstimatorKind::Reg,
    EstimatorKind::FpcBaseline,
];

/// Study configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub setting: u8,
    pub n: usize,
    pub replicates: usize,
    /// Out-of-sample evaluation points per replicate.
    pub n_eval: usize,
    /// Trajectory grid resolution on [0, 1].
    pub grid_len: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub fit: FitConfig,
}

impl SimConfig {
    pub fn new(setting: u8, n: usize, replicates: usize, seed: u64) -> Self {
        Self {
            setting,
            n,
            replicates,
            n_eval: 100,
            grid_len: 101,
            seed,
            estimators: DEFAULT_ESTIMATORS.to_vec(),
            fit: FitConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.setting) {
            return Err(Error::InvalidInput(format!(
                "setting must be 1, 2 or 3, got {}",
                self.setting
            )));
        }
        if self.n < 10 {
            return Err(Error::InvalidInput("n must be at least 10".into()));
        }
        if self.n_eval < 1 || self.replicates < 1 {
            return Err(Error::InvalidInput(
                "replicates and n' must be at least 1".into(),
            ));
        }
        if self.grid_len < 9 {
            return Err(Error::InvalidInput("grid too coarse".into()));
        }
        Ok(())
    }
}

/// One simulated replicate.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub treatments: TreatmentSet,
    /// Fourier coefficients of the trajectories (n x 4).
    pub coefs: Vec<[f64; 4]>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Analytic tau(A_i).
    pub tau: DVector<f64>,
}

/// Out-of-sample evaluation treatments with their analytic truths.
#[derive(Debug, Clone)]
pub struct EvalPoints {
    pub treatments: TreatmentSet,
    pub coefs: Vec<[f64; 4]>,
    pub tau: DVector<f64>,
}

/// SplitMix64 step, used to derive independent child seeds from the root.
pub fn child_seed(root: u64, index: u64) -> u64 {
    let mut z = root
        .wrapping_add(0x9e3779b97f4a7c15_u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn trajectory(grid: &[f64], a: &[f64; 4]) -> DenseTrajectory {
    let values = grid
        .iter()
        .map(|&t| {
            (0..4)
                .map(|k| {
                    a[k] * std::f64::consts::SQRT_2
                        * (2.0 * std::f64::consts::PI * (k + 1) as f64 * t).sin()
                })
                .sum()
        })
        .collect();
    DenseTrajectory::new(grid.to_vec(), values).expect("uniform grid trajectory")
}

/// `Psi(x) = x_2 x_1^2 + x_4^2 sin(2 x_3)`, the confounding function.
pub fn psi(x: &[f64; 4]) -> f64 {
    x[1] * x[0] * x[0] + x[3] * x[3] * (2.0 * x[2]).sin()
}

/// Analytic tau for the setting. Setting 1 is the linear functional
/// `integral a(t) mu(t) dt`, which Fourier orthogonality reduces to
/// `2 a_1 + a_2 / 2`; settings 2 and 3 share a nonlinear tau in `a_1`.
pub fn true_tau(setting: u8, a: &[f64; 4]) -> f64 {
    match setting {
        1 => 2.0 * a[0] + 0.5 * a[1],
        _ => 0.5 * a[0] * a[0] + 4.0 * a[0].sin(),
    }
}

/// Conditional outcome mean `m(a, x)` for the setting.
pub fn outcome_mean(setting: u8, a: &[f64; 4], x: &[f64; 4]) -> f64 {
    let tau = true_tau(setting, a);
    match setting {
        1 => 15.0 * psi(x) + tau,
        2 => 10.0 * psi(x) + tau,
        _ => (1.0 + 2.0 / 3.0 * psi(x)) * tau,
    }
}

/// The mean function of the Setting-1 linear effect,
/// `mu(t) = 2 sqrt2 sin 2pi t + sqrt2 cos 2pi t + (sqrt2/2) sin 4pi t
///        + sqrt2 cos 4pi t`.
pub fn setting1_mu(t: f64) -> f64 {
    use std::f64::consts::{PI, SQRT_2};
    2.0 * SQRT_2 * (2.0 * PI * t).sin()
        + SQRT_2 * (2.0 * PI * t).cos()
        + 0.5 * SQRT_2 * (4.0 * PI * t).sin()
        + SQRT_2 * (4.0 * PI * t).cos()
}

/// Generate one replicate of the design.
pub fn gen_replicate(cfg: &SimConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = uniform_grid(cfg.grid_len);
    let n = cfg.n;
    let mut coefs = Vec::with_capacity(n);
    let mut x = DMatrix::zeros(n, 4);
    let mut y = DVector::zeros(n);
    let mut tau = DVector::zeros(n);
    let mut trajs = Vec::with_capacity(n);
    for i in 0..n {
        let xi: [f64; 4] =
            std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let a: [f64; 4] = std::array::from_fn(|k| {
            DGP_COEF_SCALES[k] * xi[k]
                + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        for k in 0..4 {
            x[(i, k)] = xi[k];
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        y[i] = outcome_mean(cfg.setting, &a, &xi) + eps;
        tau[i] = true_tau(cfg.setting, &a);
        trajs.push(trajectory(&grid, &a));
        coefs.push(a);
    }
    Ok(Dataset {
        treatments: TreatmentSet::from_dense(trajs)?,
        coefs,
        x,
        y,
        tau,
    })
}

/// Out-of-sample evaluation treatments: coefficients from the marginal laws
/// `N(0, 17), N(0, 13), N(0, 9), N(0, 5)`.
pub fn gen_eval_points(cfg: &SimConfig, seed: u64) -> Result<EvalPoints> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = uniform_grid(cfg.grid_len);
    let mut coefs = Vec::with_capacity(cfg.n_eval);
    let mut tau = DVector::zeros(cfg.n_eval);
    let mut trajs = Vec::with_capacity(cfg.n_eval);
    for i in 0..cfg.n_eval {
        let a: [f64; 4] = std::array::from_fn(|k| {
            let sd = (1.0 + DGP_COEF_SCALES[k] * DGP_COEF_SCALES[k]).sqrt();
            sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        tau[i] = true_tau(cfg.setting, &a);
        trajs.push(trajectory(&grid, &a));
        coefs.push(a);
    }
    Ok(EvalPoints {
        treatments: TreatmentSet::from_dense(trajs)?,
        coefs,
        tau,
    })
}

/// Mean squared error of the model's predictions at the training
/// treatments against the analytic truths.
pub fn empirical_mse(model: &FteModel, data: &Dataset) -> Result<f64> {
    let pred = model.predict(&data.treatments)?;
    Ok((&pred - &data.tau).norm_squared() / data.tau.len() as f64)
}

/// Out-of-sample analogue on fresh evaluation treatments.
pub fn oos_mse(model: &FteModel, eval: &EvalPoints) -> Result<f64> {
    let pred = model.predict(&eval.treatments)?;
    Ok((&pred - &eval.tau).norm_squared() / eval.tau.len() as f64)
}

/// WMKRR with the analytic oracle weights (simulation diagnostic).
pub fn oracle_wmkrr(data: &Dataset, fit_cfg: &FitConfig) -> Result<FteModel> {
    let n = data.treatments.len();
    let dist = pairwise_distance_sq(&data.treatments)?;
    let spec = fit_cfg.kernel_a.resolve(&dist)?;
    let g = gram_treatment(&data.treatments, &spec)?;
    let mut w = DVector::zeros(n);
    for i in 0..n {
        let xi: [f64; 4] = std::array::from_fn(|k| data.x[(i, k)]);
        w[i] = oracle_weights(&data.coefs[i], &xi);
    }
    let z = w.component_mul(&data.y);
    let grid = match &fit_cfg.lambda_grid {
        Some(g) => g.clone(),
        None => default_lambda_grid(&g),
    };
    let (lambda, _) = select_lambda_loocv(&g, &z, &grid)?;
    let fit = krr_fit(&g, &z, lambda)?;
    let fitted = fit.fitted(&g);
    Ok(FteModel::Krr(KrrModel {
        kernel: spec,
        train: data.treatments.clone(),
        alpha: fit.alpha.as_slice().to_vec(),
        lambda,
        weights: Some(w.as_slice().to_vec()),
        eta: None,
        fitted: fitted.as_slice().to_vec(),
    }))
}

fn fit_estimator(kind: EstimatorKind, data: &Dataset, cfg: &SimConfig) -> Result<FteModel> {
    match kind {
        EstimatorKind::Cfb => Ok(fit_cfb(&data.treatments, &data.x, &data.y, &cfg.fit)?.0),
        EstimatorKind::Nw => {
            let dist = pairwise_distance_sq(&data.treatments)?;
            let spec = cfg.fit.kernel_a.resolve(&dist)?;
            nw_fit(&data.treatments, &data.y, &spec, cfg.fit.lambda_grid.as_deref())
        }
        EstimatorKind::Reg => {
            let (fit, _) = fit_reg(&data.treatments, &data.x, &data.y, &cfg.fit)?;
            Ok(fit.to_model())
        }
        EstimatorKind::FpcBaseline => {
            Ok(fpc_baseline(&data.treatments, &data.x, &data.y)?.1)
        }
        EstimatorKind::OracleWeights => oracle_wmkrr(data, &cfg.fit),
    }
}

/// One replicate's metric values for one estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimator: String,
    /// `None` when the estimator failed on this replicate.
    pub empirical_mse: Option<f64>,
    pub oos_mse: Option<f64>,
    pub error: Option<String>,
}

/// Mean and standard error of one metric for one estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub estimator: String,
    pub metric: String,
    pub mean: f64,
    pub standard_error: f64,
    pub replicates_used: usize,
    pub failures: usize,
}

/// Full study output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub summaries: Vec<MetricSummary>,
    pub records: Vec<ReplicateRecord>,
}

impl SimReport {
    pub fn summary(&self, estimator: EstimatorKind, metric: &str) -> Option<&MetricSummary> {
        self.summaries
            .iter()
            .find(|s| s.estimator == estimator.label() && s.metric == metric)
    }
}

fn summarize(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Run the replicate study. Replicates execute in parallel on independent
/// seeded streams; aggregation is by replicate index, so the report is
/// identical however the threads interleave.
pub fn run_study(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let mut results: Vec<(usize, Vec<ReplicateRecord>)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let data_seed = child_seed(cfg.seed, 2 * r as u64);
            let eval_seed = child_seed(cfg.seed, 2 * r as u64 + 1);
            let mut recs = Vec::with_capacity(cfg.estimators.len());
            let prepared = gen_replicate(cfg, data_seed)
                .and_then(|d| gen_eval_points(cfg, eval_seed).map(|e| (d, e)));
            match prepared {
                Ok((data, eval)) => {
                    for &kind in &cfg.estimators {
                        let rec = match fit_estimator(kind, &data, cfg) {
                            Ok(model) => ReplicateRecord {
                                replicate: r,
                                estimator: kind.label().to_string(),
                                empirical_mse: empirical_mse(&model, &data).ok(),
                                oos_mse: oos_mse(&model, &eval).ok(),
                                error: None,
                            },
                            Err(e) => ReplicateRecord {
                                replicate: r,
                                estimator: kind.label().to_string(),
                                empirical_mse: None,
                                oos_mse: None,
                                error: Some(e.to_string()),
                            },
                        };
                        recs.push(rec);
                    }
                }
                Err(e) => {
                    for &kind in &cfg.estimators {
                        recs.push(ReplicateRecord {
                            replicate: r,
                            estimator: kind.label().to_string(),
                            empirical_mse: None,
                            oos_mse: None,
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
            (r, recs)
        })
        .collect();
    results.sort_by_key(|(r, _)| *r);
    let records: Vec<ReplicateRecord> = results.into_iter().flat_map(|(_, v)| v).collect();

    let mut summaries = Vec::new();
    for &kind in &cfg.estimators {
        for (metric, pick) in [
            ("empirical_mse", 0usize),
            ("oos_mse", 1usize),
        ] {
            let values: Vec<f64> = records
                .iter()
                .filter(|rec| rec.estimator == kind.label())
                .filter_map(|rec| {
                    if pick == 0 {
                        rec.empirical_mse
                    } else {
                        rec.oos_mse
                    }
                })
                .collect();
            let failures = cfg.replicates - values.len();
            let (mean, standard_error) = if values.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                summarize(&values)
            };
            summaries.push(MetricSummary {
                estimator: kind.label().to_string(),
                metric: metric.to_string(),
                mean,
                standard_error,
                replicates_used: values.len(),
                failures,
            });
        }
    }
    Ok(SimReport {
        config: cfg.clone(),
        summaries,
        records,
    })
}

/// Automatic treatment-kernel bandwidth of a dataset (exposed for tests and
/// the CLI's diagnostics).
pub fn auto_bandwidth(set: &TreatmentSet) -> Result<f64> {
    median_heuristic(&pairwise_distance_sq(set)?)
}
