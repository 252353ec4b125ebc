//! Scalar kernels, the median heuristic for bandwidth selection, and Gram
//! matrix construction for treatments and covariates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcrep::{self, TreatmentSet};

const NEG_DIST_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `(sqrt(2 pi) sigma)^-1 exp(-d^2 / sigma^2)`, the default.
    GaussianNormalized,
    /// `exp(-2 d^2 / theta)`.
    Gaussian,
    /// `exp(-sqrt(d^2) / theta)`.
    Exponential,
    /// `<a, b> + c` on inner products.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// theta / sigma for the radial kinds; ignored for the linear kernel.
    pub bandwidth: f64,
    /// Offset c for the linear kernel only.
    #[serde(default = "default_offset")]
    pub offset: f64,
}

fn default_offset() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn new(kind: KernelKind, bandwidth: f64) -> Self {
        Self {
            kind,
            bandwidth,
            offset: default_offset(),
        }
    }

    pub fn linear(offset: f64) -> Self {
        Self {
            kind: KernelKind::Linear,
            bandwidth: 1.0,
            offset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            KernelKind::Linear => Ok(()),
            _ => {
                if self.bandwidth > 0.0 && self.bandwidth.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!(
                        "kernel bandwidth must be positive and finite, got {}",
                        self.bandwidth
                    )))
                }
            }
        }
    }

    /// Whether `eval` expects a squared distance (radial kinds) rather
    /// than an inner product (linear).
    pub fn takes_distance(&self) -> bool {
        !matches!(self.kind, KernelKind::Linear)
    }

    /// Evaluate the kernel on a squared distance (radial kinds) or an
    /// inner product (linear).
    pub fn eval(&self, dist_sq_or_inner: f64) -> Result<f64> {
        match self.kind {
            KernelKind::Linear => Ok(dist_sq_or_inner + self.offset),
            kind => {
                let d2 = dist_sq_or_inner;
                if d2 < -NEG_DIST_TOL {
                    return Err(Error::Degenerate(format!(
                        "negative squared distance {d2} beyond tolerance"
                    )));
                }
                let d2 = d2.max(0.0);
                Ok(match kind {
                    KernelKind::GaussianNormalized => {
                        let s = self.bandwidth;
                        ((2.0 * std::f64::consts::PI).sqrt() * s).recip()
                            * (-d2 / (s * s)).exp()
                    }
                    KernelKind::Gaussian => (-2.0 * d2 / self.bandwidth).exp(),
                    KernelKind::Exponential => (-d2.sqrt() / self.bandwidth).exp(),
                    KernelKind::Linear => unreachable!(),
                })
            }
        }
    }

    /// Kernel value at zero distance (diagonal value for radial kinds).
    pub fn at_zero(&self) -> f64 {
        match self.kind {
            KernelKind::GaussianNormalized => {
                ((2.0 * std::f64::consts::PI).sqrt() * self.bandwidth).recip()
            }
            KernelKind::Gaussian | KernelKind::Exponential => 1.0,
            KernelKind::Linear => self.offset,
        }
    }
}

/// Free-function form of [`KernelSpec::eval`].
pub fn kernel_eval(spec: &KernelSpec, dist_sq_or_inner: f64) -> Result<f64> {
    spec.eval(dist_sq_or_inner)
}

/// Median of the pairwise (square-rooted) distances in the strict upper
/// triangle. The returned value is used directly as sigma, so the exponent
/// `d^2/sigma^2` equals 1 at the median distance.
pub fn median_heuristic(dist_sq: &DMatrix<f64>) -> Result<f64> {
    let n = dist_sq.nrows();
    if n < 2 || dist_sq.ncols() != n {
        return Err(Error::DimensionMismatch(
            "median heuristic needs a square matrix with n >= 2".into(),
        ));
    }
    let mut ds: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            ds.push(dist_sq[(i, j)].max(0.0).sqrt());
        }
    }
    ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = ds.len();
    let med = if m % 2 == 1 {
        ds[m / 2]
    } else {
        0.5 * (ds[m / 2 - 1] + ds[m / 2])
    };
    if med <= 0.0 {
        return Err(Error::Degenerate(
            "all pairwise distances are zero; median-heuristic bandwidth is degenerate".into(),
        ));
    }
    Ok(med)
}

/// Treatment Gram matrix `[K_A(A_i, A_j)]`.
pub fn gram_treatment(set: &TreatmentSet, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let base = if spec.takes_distance() {
        funcrep::pairwise_distance_sq(set)?
    } else {
        funcrep::pairwise_inner(set)?
    };
    gram_from_base(&base, spec)
}

fn gram_from_base(base: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let n = base.nrows();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.eval(base[(i, j)])?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Cross Gram matrix `[K_A(new_i, train_j)]` for prediction.
pub fn cross_gram_treatment(
    train: &TreatmentSet,
    new_items: &TreatmentSet,
    spec: &KernelSpec,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let mut g = DMatrix::zeros(new_items.len(), train.len());
    for (i, a) in new_items.items().iter().enumerate() {
        for (j, b) in train.items().iter().enumerate() {
            let base = if spec.takes_distance() {
                funcrep::distance_sq(a, b)
            } else {
                funcrep::inner(a, b)
            }
            .map_err(|e| Error::AtIndex {
                i,
                j,
                source: Box::new(e),
            })?;
            g[(i, j)] = spec.eval(base)?;
        }
    }
    Ok(g)
}

/// Pairwise squared Euclidean distances between the rows of `x`.
pub fn row_distance_sq(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("covariates must be finite".into()));
    }
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (x.row(i) - x.row(j)).norm_squared();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Covariate Gram matrix together with its row means and grand mean.
pub fn gram_covariates(
    x: &DMatrix<f64>,
    spec: &KernelSpec,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    spec.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("covariates must be finite".into()));
    }
    let n = x.nrows();
    let base = if spec.takes_distance() {
        row_distance_sq(x)?
    } else {
        x * x.transpose()
    };
    let g = gram_from_base(&base, spec)?;
    let rowmean = DVector::from_iterator(n, g.row_iter().map(|r| r.sum() / n as f64));
    let grand = rowmean.sum() / n as f64;
    Ok((g, rowmean, grand))
}

/// The Gram matrices of one dataset: `G_A`, `G_X`, the row means of `G_X`
/// and their grand mean.
#[derive(Debug, Clone)]
pub struct GramSet {
    pub g_a: DMatrix<f64>,
    pub g_x: DMatrix<f64>,
    pub g_x_rowmean: DVector<f64>,
    pub g_x_mean: f64,
    pub n: usize,
}

impl GramSet {
    pub fn new(g_a: DMatrix<f64>, g_x: DMatrix<f64>) -> Result<Self> {
        let n = g_a.nrows();
        if g_a.ncols() != n || g_x.nrows() != n || g_x.ncols() != n {
            return Err(Error::DimensionMismatch(
                "G_A and G_X must be square with matching size".into(),
            ));
        }
        let g_x_rowmean =
            DVector::from_iterator(n, g_x.row_iter().map(|r| r.sum() / n as f64));
        let g_x_mean = g_x_rowmean.sum() / n as f64;
        Ok(Self {
            g_a,
            g_x,
            g_x_rowmean,
            g_x_mean,
            n,
        })
    }

    pub fn from_data(
        set: &TreatmentSet,
        x: &DMatrix<f64>,
        spec_a: &KernelSpec,
        spec_x: &KernelSpec,
    ) -> Result<Self> {
        if x.nrows() != set.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} treatments but {} covariate rows",
                set.len(),
                x.nrows()
            )));
        }
        let g_a = gram_treatment(set, spec_a)?;
        let (g_x, _, _) = gram_covariates(x, spec_x)?;
        Self::new(g_a, g_x)
    }
}
