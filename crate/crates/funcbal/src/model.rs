//! Fitted effect-function models. Every estimator exposes its result as an
//! [`FteModel`] so the CLI and the simulation harness can treat them
//! uniformly, and so models can be persisted and reloaded without side
//! files (training treatments are embedded verbatim).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcrep::{resample_to_grid, FunctionalSample, TreatmentSet};
use crate::kernels::KernelSpec;
use crate::krr::{krr_predict, RidgeFit};

/// Kernel ridge model: `tau(a) = sum_i alpha_i K_A(a, A_i)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KrrModel {
    pub kernel: KernelSpec,
    pub train: TreatmentSet,
    pub alpha: Vec<f64>,
    pub lambda: f64,
    /// Balancing weights used to adjust the responses, when any.
    pub weights: Option<Vec<f64>>,
    pub eta: Option<f64>,
    /// Fitted values at the training treatments.
    pub fitted: Vec<f64>,
}

/// Linear model on functional principal component scores:
/// `tau(a) = intercept + sum_k coef_k * score_k(a)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpcLinearModel {
    pub grid: Vec<f64>,
    pub mean_curve: Vec<f64>,
    /// Retained eigenfunctions evaluated on the grid, one per component.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// Trapezoid quadrature weights for the grid.
    pub quad_weights: Vec<f64>,
    pub intercept: f64,
    pub coefs: Vec<f64>,
    pub fitted: Vec<f64>,
}

impl FpcLinearModel {
    /// FPC scores of a trajectory against the stored basis.
    pub fn scores(&self, sample: &FunctionalSample) -> Result<Vec<f64>> {
        let traj = match sample {
            FunctionalSample::Dense(t) => t,
            FunctionalSample::Embedded(_) => {
                return Err(Error::RepresentationMismatch(
                    "FPC model requires dense trajectories".into(),
                ))
            }
        };
        let on_grid = if traj.grid() == self.grid.as_slice() {
            traj.clone()
        } else {
            resample_to_grid(traj, &self.grid)?
        };
        let centered: Vec<f64> = on_grid
            .values()
            .iter()
            .zip(&self.mean_curve)
            .map(|(v, m)| v - m)
            .collect();
        Ok(self
            .eigenfunctions
            .iter()
            .map(|phi| {
                centered
                    .iter()
                    .zip(phi)
                    .zip(&self.quad_weights)
                    .map(|((c, p), w)| c * p * w)
                    .sum()
            })
            .collect())
    }
}

/// A fitted effect function `tau(a)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FteModel {
    Krr(KrrModel),
    FpcLinear(FpcLinearModel),
}

impl FteModel {
    pub fn predict(&self, new_items: &TreatmentSet) -> Result<DVector<f64>> {
        match self {
            FteModel::Krr(m) => {
                let fit = RidgeFit {
                    alpha: DVector::from_vec(m.alpha.clone()),
                    lambda: m.lambda,
                };
                krr_predict(&fit, &m.kernel, &m.train, new_items)
            }
            FteModel::FpcLinear(m) => {
                let mut out = DVector::zeros(new_items.len());
                for (i, item) in new_items.items().iter().enumerate() {
                    let s = m.scores(item)?;
                    out[i] = m.intercept
                        + s.iter().zip(&m.coefs).map(|(a, b)| a * b).sum::<f64>();
                }
                Ok(out)
            }
        }
    }

    /// Fitted values at the training points.
    pub fn fitted(&self) -> &[f64] {
        match self {
            FteModel::Krr(m) => &m.fitted,
            FteModel::FpcLinear(m) => &m.fitted,
        }
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            FteModel::Krr(m) => m.weights.as_deref(),
            FteModel::FpcLinear(_) => None,
        }
    }
}
