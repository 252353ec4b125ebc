//! Functional treatment representations and the pairwise squared distances
//! on which every treatment kernel is built.
//!
//! Two representations are supported: densely observed trajectories on a
//! grid in [0, 1] (squared L2 distance by trapezoid quadrature) and sample
//! sets compared through their empirical kernel mean embeddings (squared
//! RKHS distance).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// A trajectory observed on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTrajectory {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl DenseTrajectory {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "grid has {} points but values has {}",
                grid.len(),
                values.len()
            )));
        }
        if grid.len() < 2 {
            return Err(Error::InvalidInput(
                "a trajectory needs at least 2 grid points".into(),
            ));
        }
        if !grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput(
                "trajectory grid must be strictly increasing".into(),
            ));
        }
        if grid.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "trajectory grid and values must be finite".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least 2 points
    }
}

/// A finite sample from a distribution, represented through its empirical
/// kernel mean embedding with base kernel `base_kernel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    points: Vec<f64>,
    base_kernel: KernelSpec,
}

impl SampleSet {
    pub fn new(points: Vec<f64>, base_kernel: KernelSpec) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("sample set must be nonempty".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("sample points must be finite".into()));
        }
        base_kernel.validate()?;
        Ok(Self {
            points,
            base_kernel,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn base_kernel(&self) -> &KernelSpec {
        &self.base_kernel
    }
}

/// One functional treatment observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FunctionalSample {
    Dense(DenseTrajectory),
    Embedded(SampleSet),
}

impl FunctionalSample {
    pub fn is_dense(&self) -> bool {
        matches!(self, FunctionalSample::Dense(_))
    }
}

/// A homogeneous collection of functional treatments (all dense or all
/// sample-set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSet {
    items: Vec<FunctionalSample>,
}

impl TreatmentSet {
    pub fn new(items: Vec<FunctionalSample>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidInput("treatment set must be nonempty".into()));
        }
        let dense = items[0].is_dense();
        if items.iter().any(|it| it.is_dense() != dense) {
            return Err(Error::RepresentationMismatch(
                "treatment set mixes dense trajectories and sample sets".into(),
            ));
        }
        Ok(Self { items })
    }

    pub fn from_dense(trajs: Vec<DenseTrajectory>) -> Result<Self> {
        Self::new(trajs.into_iter().map(FunctionalSample::Dense).collect())
    }

    pub fn from_sample_sets(sets: Vec<SampleSet>) -> Result<Self> {
        Self::new(sets.into_iter().map(FunctionalSample::Embedded).collect())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[FunctionalSample] {
        &self.items
    }

    pub fn is_dense(&self) -> bool {
        self.items[0].is_dense()
    }

    /// Dense trajectories, or an error for sample-set treatments.
    pub fn dense_items(&self) -> Result<Vec<&DenseTrajectory>> {
        self.items
            .iter()
            .map(|it| match it {
                FunctionalSample::Dense(t) => Ok(t),
                FunctionalSample::Embedded(_) => Err(Error::RepresentationMismatch(
                    "expected dense trajectories".into(),
                )),
            })
            .collect()
    }
}

/// Trapezoid-rule approximation of the squared L2 distance
/// `∫ (a1(t) - a2(t))^2 dt` over the shared grid.
pub fn l2_distance_sq(a1: &DenseTrajectory, a2: &DenseTrajectory) -> Result<f64> {
    if a1.grid != a2.grid {
        return Err(Error::GridMismatch(
            "trajectories must share the same grid (use resample_to_grid first)".into(),
        ));
    }
    let mut acc = 0.0;
    for j in 1..a1.grid.len() {
        let h = a1.grid[j] - a1.grid[j - 1];
        let d0 = a1.values[j - 1] - a2.values[j - 1];
        let d1 = a1.values[j] - a2.values[j];
        acc += 0.5 * h * (d0 * d0 + d1 * d1);
    }
    Ok(acc)
}

/// Trapezoid-rule approximation of `∫ a1(t) a2(t) dt` over the shared grid.
pub fn l2_inner(a1: &DenseTrajectory, a2: &DenseTrajectory) -> Result<f64> {
    if a1.grid != a2.grid {
        return Err(Error::GridMismatch(
            "trajectories must share the same grid (use resample_to_grid first)".into(),
        ));
    }
    let mut acc = 0.0;
    for j in 1..a1.grid.len() {
        let h = a1.grid[j] - a1.grid[j - 1];
        acc += 0.5
            * h
            * (a1.values[j - 1] * a2.values[j - 1] + a1.values[j] * a2.values[j]);
    }
    Ok(acc)
}

const EMBED_CLAMP: f64 = 1e-12;

/// Squared RKHS distance between two empirical kernel mean embeddings:
/// `mean K(t1, t1') + mean K(t2, t2') - 2 mean K(t1, t2)`. Tiny negative
/// values from floating-point cancellation are clamped to 0.
pub fn embed_distance_sq(s1: &SampleSet, s2: &SampleSet) -> Result<f64> {
    if s1.base_kernel != s2.base_kernel {
        return Err(Error::KernelMismatch(
            "sample sets must share the same base kernel".into(),
        ));
    }
    let k = &s1.base_kernel;
    let d = mean_kernel(k, &s1.points, &s1.points)? + mean_kernel(k, &s2.points, &s2.points)?
        - 2.0 * mean_kernel(k, &s1.points, &s2.points)?;
    if d < -EMBED_CLAMP {
        return Err(Error::Degenerate(format!(
            "embedding distance {d} is negative beyond the clamping tolerance"
        )));
    }
    Ok(d.max(0.0))
}

fn mean_kernel(k: &KernelSpec, p: &[f64], q: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for &a in p {
        for &b in q {
            let d = a - b;
            acc += k.eval(d * d)?;
        }
    }
    Ok(acc / (p.len() as f64 * q.len() as f64))
}

/// Mean embedding inner product `⟨Â1, Â2⟩ = mean K(t1, t2)`.
pub fn embed_inner(s1: &SampleSet, s2: &SampleSet) -> Result<f64> {
    if s1.base_kernel != s2.base_kernel {
        return Err(Error::KernelMismatch(
            "sample sets must share the same base kernel".into(),
        ));
    }
    mean_kernel(&s1.base_kernel, &s1.points, &s2.points)
}

/// Linear interpolation of a trajectory at new time points. The target grid
/// must be contained in the source range; extrapolation is an error.
pub fn resample_to_grid(t: &DenseTrajectory, grid: &[f64]) -> Result<DenseTrajectory> {
    let (lo, hi) = (t.grid[0], *t.grid.last().unwrap());
    let mut values = Vec::with_capacity(grid.len());
    for &x in grid {
        if x < lo || x > hi {
            return Err(Error::GridMismatch(format!(
                "target point {x} is outside the source range [{lo}, {hi}]"
            )));
        }
        // binary search for the bracketing interval
        let j = match t.grid.binary_search_by(|g| g.partial_cmp(&x).unwrap()) {
            Ok(j) => {
                values.push(t.values[j]);
                continue;
            }
            Err(j) => j,
        };
        let (g0, g1) = (t.grid[j - 1], t.grid[j]);
        let w = (x - g0) / (g1 - g0);
        values.push(t.values[j - 1] * (1.0 - w) + t.values[j] * w);
    }
    DenseTrajectory::new(grid.to_vec(), values)
}

fn sample_distance_sq(a: &FunctionalSample, b: &FunctionalSample) -> Result<f64> {
    match (a, b) {
        (FunctionalSample::Dense(x), FunctionalSample::Dense(y)) => l2_distance_sq(x, y),
        (FunctionalSample::Embedded(x), FunctionalSample::Embedded(y)) => embed_distance_sq(x, y),
        _ => Err(Error::RepresentationMismatch(
            "cannot compare a dense trajectory with a sample set".into(),
        )),
    }
}

/// Squared distance between two functional samples in the applicable metric.
pub fn distance_sq(a: &FunctionalSample, b: &FunctionalSample) -> Result<f64> {
    sample_distance_sq(a, b)
}

/// Inner product between two functional samples in the applicable geometry.
pub fn inner(a: &FunctionalSample, b: &FunctionalSample) -> Result<f64> {
    match (a, b) {
        (FunctionalSample::Dense(x), FunctionalSample::Dense(y)) => l2_inner(x, y),
        (FunctionalSample::Embedded(x), FunctionalSample::Embedded(y)) => embed_inner(x, y),
        _ => Err(Error::RepresentationMismatch(
            "cannot compare a dense trajectory with a sample set".into(),
        )),
    }
}

/// Symmetric matrix of pairwise squared distances with zero diagonal.
pub fn pairwise_distance_sq(set: &TreatmentSet) -> Result<DMatrix<f64>> {
    let n = set.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sample_distance_sq(&set.items[i], &set.items[j]).map_err(|e| {
                Error::AtIndex {
                    i,
                    j,
                    source: Box::new(e),
                }
            })?;
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Symmetric matrix of pairwise inner products (used by the linear kernel).
pub fn pairwise_inner(set: &TreatmentSet) -> Result<DMatrix<f64>> {
    let n = set.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = inner(&set.items[i], &set.items[j]).map_err(|e| Error::AtIndex {
                i,
                j,
                source: Box::new(e),
            })?;
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// A uniform grid of `len` points on [0, 1].
pub fn uniform_grid(len: usize) -> Vec<f64> {
    let m = (len - 1) as f64;
    (0..len).map(|j| j as f64 / m).collect()
}
